"""Glue between the config schema and the module-level builders."""

from __future__ import annotations

import logging

import numpy as np

from . import data as data_mod
from . import embed as embed_mod
from . import graph as graph_mod
from .config import ExperimentConfig
from .model import GvseModel, ModelConfig

logger = logging.getLogger(__name__)


def build_dataset(cfg: ExperimentConfig) -> data_mod.Dataset:
    if cfg.data.synthetic is not None:
        spec = data_mod.SyntheticSpec(**cfg.data.synthetic)
        rng = np.random.default_rng(cfg.train.seed)
        ds = data_mod.generate_synthetic(spec, rng)
    else:
        p = cfg.data.paths
        ds = data_mod.load_dataset(p["images"], p["labels"], p["attributes"], p["split"],
                                   binarize_mode=cfg.graph.binarize)
    return ds


def build_graph(cfg: ExperimentConfig, cam: graph_mod.CategoryAttributeMatrix) -> graph_mod.KnowledgeGraph:
    if cfg.graph.type == "category":
        return graph_mod.build_category_graph(cam, cfg.graph.category_threshold)
    return graph_mod.build_attribute_graph(cam, cfg.graph.delta, cfg.graph.binarize)


def build_embedding(cfg: ExperimentConfig, cam: graph_mod.CategoryAttributeMatrix) -> embed_mod.WordEmbeddingTable:
    membership = graph_mod.binarize_attributes(cam, cfg.graph.binarize)
    corpus = embed_mod.AttributeCorpus.from_membership(membership)
    ppmi = embed_mod.build_ppmi(corpus)
    d = min(cfg.embedding.d, ppmi.shape[0])
    if d < cfg.embedding.d:
        logger.info("embedding.d=%d exceeds vertex count %d; using d=%d",
                    cfg.embedding.d, ppmi.shape[0], d)
    table = embed_mod.factorize(ppmi, d=d, seed=cfg.embedding.seed)
    table.attribute_names = list(cam.attribute_names)
    return table


def build_model(cfg: ExperimentConfig, dataset: data_mod.Dataset,
                kg: graph_mod.KnowledgeGraph) -> GvseModel:
    """Assemble the network for a dataset and knowledge graph.

    With a category-level graph the GCN vertices are categories rather than
    attributes, so the word-vector regression has no per-vertex target and
    is switched off by the caller (gamma has no effect then).
    """
    operator = graph_mod.propagation_operator(kg, self_loops=cfg.graph.self_loops)
    spec = cfg.data.synthetic
    hw = spec["hw"] if spec and "hw" in spec else dataset.images.shape[2]
    mc = ModelConfig(
        num_attributes=dataset.cam.num_attributes,
        num_classes=dataset.num_classes,
        graph_vertices=kg.m,
        image_hw=hw,
        in_channels=dataset.images.shape[1],
        blocks=[tuple(b) for b in cfg.model.blocks],
        wiring=cfg.model.wiring,
        fusion=cfg.model.fusion,
        gvse_enabled=cfg.model.gvse_enabled,
        latent=cfg.model.latent,
        latent_dim=cfg.model.latent_dim,
        d_node=cfg.model.d_node,
        gcn_hidden=cfg.model.gcn_hidden,
        embed_dim=(dataset.word_table.dim if dataset.word_table is not None
                   else min(cfg.embedding.d, kg.m)),
    )
    return GvseModel(mc, operator.matrix, seed=cfg.train.seed)
