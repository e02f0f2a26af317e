"""Link-level simulator of on-off division multiple access unsourced random
access with a multi-antenna receiver."""

from .channel import ChannelRealization, ReceivedFrame, add_noise, draw_channel
from .codebooks import (CodebookSet, ExtendedPilotCodebook, PatternMatrix,
                        PilotCodebook, build_codebooks, build_pattern_matrix,
                        build_pilot_codebook, extend_pilot_codebook,
                        load_codebooks, save_codebooks)
from .config import (SIC_INITIAL, SIC_MODES, SIC_REESTIMATE, SystemConfig,
                     ValidationReport, energy_per_bit, validate)
from .fec import (ListDecodeResult, PolarCodeSpec, crc_attach, crc_check,
                  make_polar_spec, polar_encode, qpsk_llr, qpsk_map, scl_decode,
                  spec_from_config)
from .harness import (ExperimentPlan, ResultRow, SearchResult, estimate_pe,
                      run_point, run_trial, run_trials, search_min_ebn0,
                      try_both_sic, write_csv)
from .metrics import (PupeSummary, TrialOutcome, channel_mse, compute_pupe,
                      count_collisions, evaluate_trial)
from .receiver import (DecodeOutput, DetectedSet, IterationStats, decode_user,
                       gomp_detect, iterative_decode, lmmse_channel_estimate,
                       mrc_estimate, sic_initial, sic_reestimated)
from .transmitter import (TxFrame, UserMessage, bits_to_int, draw_messages,
                          encode_user, int_to_bits, split_message, superimpose)

__version__ = "0.1.0"
