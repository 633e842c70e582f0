"""edgemark: multi-bit black-box watermarking for node-level GNNs.

A payload of fair coin-flip bits is written into the signs of per-edge
carrier values (prediction-space cosine minus feature-space cosine across
each selected edge of a trigger graph) by fine-tuning, and recovered from
any suspect model with a single black-box query.
"""

from .attacks import (AttackReport, SweepCell, SweepContext, extract_surrogate,
                      finetune_attack, overwrite_attack, prune_l1,
                      public_query_graph, sweep)
from .autodiff import Tape, Tensor, grad_check
from .carrier import (edge_gap, edge_gap_values, extract_bits,
                      standardize_logits, standardize_predictions)
from .config import DataConfig, ModelConfig, RunConfig, load_run_config
from .embedding import (EmbedConfig, EmbedResult, PseudoGraphConfig,
                        TriggerSynthConfig, bit_alignment_loss, embed_setting1,
                        embed_setting2, embed_setting3, synth_trigger)
from .graphs import (Graph, SplitSpec, convert_csv, generate_ba, generate_er,
                     generate_sbm, induced_split, load_graph, save_graph)
from .models import (GnnModel, LayerSpec, TrainConfig, default_arch, forward,
                     load_model, save_model, test_accuracy, test_cross_entropy,
                     train_primary)
from .optim import Adam, AdamState, adam_step
from .service import HttpProvider, ServerThread, make_server, serve
from .verification import (InProcessProvider, VerificationResult,
                           collision_alpha, collision_alpha_exact,
                           collision_threshold, hamming_similarity,
                           population_metrics, verification_report, verify)
from .watermark import (WatermarkKey, WatermarkRegistry, WatermarkString,
                        load_key, load_registry, random_watermark, save_key,
                        save_registry, select_key_cross_label,
                        select_key_structural)

__version__ = "0.1.0"
