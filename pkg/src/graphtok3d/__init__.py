"""Scene-graph tokenization for 3D vision-language models.

Point-cloud object proposals become a k-nearest-neighbor scene graph, which
is flattened into identifier / 2D-feature / node / edge token slots and
projected into a model width by small MLPs.
"""

from .errors import (DuplicateObjectId, EmptyScene, GenerationError, GraphTokError,
                     InvalidProposal, MissingEdgeFeature, MissingFeature, ParseError,
                     ShapeError, TooManyObjects, TrainingDiverged, ValidationError)
from .flatten import (FlatSequence, PromptLayout, TokenSlot, assemble_prompt, flatten,
                      flatten_edge_only, flatten_triplet, object_token, token_budget,
                      token_budget_full)
from .graph import (GraphConfig, RelationEdge, SceneGraph, aabb_iou, build_scene_graph,
                    geometric_relation_feature, load_graph, nms_dedup, save_graph,
                    select_knn_neighbors)
from .metrics import acc_at_iou, bleu4, CaptionPair, exact_match, f1_at_iou, GroundingPrediction
from .projection import (MLPParams, ProjectionSet, init_params, load_checkpoint, mlp_backward,
                         mlp_forward, project_sequence, save_checkpoint)
from .scene import (AxisAlignedBox, ObjectProposal, RawFeatures, Scene, compute_aabb,
                    compute_centroid, load_scene, parse_manifest, save_scene)
from .toy import (GroundingExample, ToyModel, TrainConfig, evaluate_grounding,
                  generate_synthetic_scene, nll_loss, train)

__version__ = "0.1.0"
