from .config import ModelConfig
from .decoder import RFB, Decoder
from .encoder import (Encoder, HieraBlock, Stem, StageTransition, add_pos_embed, padding_key_mask,
                      window_mask, window_partition, window_unpartition)
from .network import (BACKBONE, HEAD, RangeSAM, count_parameters, decoder_forward, encoder_forward,
                      parameter_breakdown, parameter_report, pos_embed_forward, rfb_forward,
                      stage_transition, stem_forward)
