"""Graph-entangled visual-semantic network for zero-shot image recognition.

A from-scratch numpy implementation: a small CNN whose feature maps are
entangled, block by block, with a graph convolutional network running on an
attribute co-occurrence knowledge graph. Ships with PPMI word embeddings,
CZSL/GZSL evaluation, a synthetic attribute-patch dataset, and a CLI.
"""

from .config import (
    DataConfig,
    EmbeddingConfig,
    ExperimentConfig,
    GraphConfig,
    ModelSection,
    TrainSection,
    load_config,
    parse_config,
)
from .data import Dataset, SplitSpec, SyntheticSpec, generate_synthetic, load_dataset, save_dataset
from .errors import (
    ArtifactMismatch,
    ConfigError,
    ContractError,
    DegenerateDataError,
    EmptyGraphError,
    GvseError,
    NumericFault,
    OracleError,
    ShapeError,
    SplitError,
    ValidationError,
)
from .evaluation import (
    Metrics,
    PrototypeSet,
    build_prototype_set,
    czsl_metrics,
    gzsl_metrics,
    harmonic_mean,
    per_class_top1,
    predict_czsl,
    predict_with_latent,
    seen_prototypes,
    unseen_prototypes_ridge,
)
from .graph import (
    CategoryAttributeMatrix,
    KnowledgeGraph,
    PropagationOperator,
    binarize_attributes,
    build_attribute_graph,
    build_category_graph,
    compute_pmi,
    normalize_pmi,
    propagation_operator,
    read_attribute_csv,
    write_attribute_csv,
)
from .embed import (
    AttributeCorpus,
    WordEmbeddingTable,
    build_ppmi,
    class_targets,
    factorize,
    read_embedding_csv,
    write_embedding_csv,
)
from .model import (
    CnnBlockSpec,
    ForwardTrace,
    GvseModel,
    ModelConfig,
    config_digest,
    load_checkpoint,
    save_checkpoint,
)
from .tensor import Param, Tensor, check_gradients
from .train import LossWeights, TrainConfig, loss_total, train_epoch, train_model

__version__ = "1.0.0"
