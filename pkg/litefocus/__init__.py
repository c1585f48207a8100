from .attention import (DENSE, AttentionKind, AttentionMode, ProjectionWeights, attend_heads, dense_attention,
                        max_relative_deviation, multi_head_attention, project_qkv, stable_row_softmax)
from .errors import DegenerateFocusError, FormatError, LiteFocusError, TruncationError, ValidationError
from .focus import (CompensationSet, FocusSet, Spectrogrid, build_focus_set, cross_frequency_sample,
                    expected_focus_size, same_frequency_set, token_coords, token_index)
from .sparse import (attended_pair_count, build_kernel, gather_rows, litefocus_attention_grouped,
                     litefocus_attention_reference)
from .tensor_io import random_tensor, read_tensor, write_tensor
from .tome import MergePlan, apply_merge, bipartite_soft_matching, tome_attention, unmerge
