"""Training-free 3D instance segmentation from multi-view 2D masks."""

from .aggregate import (GrowConfig, GrowContext, MergeSchedule, Seed,
                        affinity, grow_seed, grow_seeds, lift_masks,
                        merge_views, seed_feature, seeds_from_lifted,
                        split_seeds)
from .density import (ClusterConfig, ClusterLabels, core_distances,
                      extract_clusters, hdbscan, mutual_reachability_mst)
from .errors import (ConfigurationError, DependencyError, GenerationError,
                     LiftsegError, ParseError, PipelineError,
                     SemanticUndefinedError, ValidationError)
from .evaluation import (EvalConfig, EvalReport, evaluate, match_and_ap,
                         patch_drop)
from .maskfilter import (FilterConfig, MaskSuperpointTable, build_table,
                         cooccurrence_scores, filter_masks,
                         visible_superpoints)
from .oversegment import OversegConfig, build_knn_graph, oversegment, segment_graph
from .pipeline import PipelineConfig, run_pipeline, run_stage, select_views
from .projection import (MappingConfig, Strategy, ViewMapping, build_mapping,
                         build_mappings, project_points, rasterize_depth,
                         verify_visibility)
from .scene import (CameraView, FeatureTable, Mask2D, MaskSet, PointCloud,
                    PointSetInstance, ProposalSet, Provenance, SceneBundle,
                    SuperpointPartition)
from .semantic import (PixelFeatureSource, TextQuery, aggregate_point_features,
                       proposal_feature, rank_by_query, search)
from .synth import (CorruptionConfig, GroundTruth, SynthConfig, emit_scene,
                    generate_scene, pixel_feature_maps, render_masks)

__version__ = "0.1.0"
