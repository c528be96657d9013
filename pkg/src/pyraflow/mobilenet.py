"""Frozen MobileNetV3-Large stage manifest and the pyramid backbone adapter.

The bottleneck table below is the published large-variant definition,
truncated after the last stride-32 bottleneck (the classifier head is not
part of a feature pyramid).  The adapter taps the last block of each
stride stage, appends one extra stride-2 inverted-residual for the
stride-64 level, and 1×1-projects every tap to the pyramid channel widths
used by the rest of the engine.
"""

from __future__ import annotations

from .blocks import BlockSpec

# (kernel, expand_ratio, out_ch, use_se, activation, stride)
MOBILENETV3_LARGE = (
    (3, 1.0, 16, False, "relu", 1),
    (3, 4.0, 24, False, "relu", 2),
    (3, 3.0, 24, False, "relu", 1),
    (5, 3.0, 40, True, "relu", 2),
    (5, 3.0, 40, True, "relu", 1),
    (5, 3.0, 40, True, "relu", 1),
    (3, 6.0, 80, False, "hard_swish", 2),
    (3, 2.5, 80, False, "hard_swish", 1),
    (3, 2.3, 80, False, "hard_swish", 1),
    (3, 2.3, 80, False, "hard_swish", 1),
    (3, 6.0, 112, True, "hard_swish", 1),
    (3, 6.0, 112, True, "hard_swish", 1),
    (5, 6.0, 160, True, "hard_swish", 2),
    (5, 6.0, 160, True, "hard_swish", 1),
    (5, 6.0, 160, True, "hard_swish", 1),
)

STEM_CH = 16

# Index (into the block list below, stem excluded) of the last bottleneck
# at each stride, plus its channel count.  Strides 2..32.
_TAP_ROWS = ((1, 16), (3, 24), (6, 40), (12, 112), (15, 160))

EXTRA_EXPAND = 4.0  # stride-64 block appended after the trunk


def backbone_blocks() -> tuple[list[BlockSpec], dict[int, int]]:
    """Stem + bottlenecks + extra stride-64 block.

    Returns the ordered block list and a map from pyramid level (1..6) to
    the index of the block whose output is tapped.
    """
    blocks = [
        BlockSpec("bb.stem", "conv", 3, STEM_CH, kernel=3, stride=2,
                  activation="hard_swish")
    ]
    in_ch = STEM_CH
    for i, (k, exp, out, se, act, stride) in enumerate(MOBILENETV3_LARGE, start=1):
        blocks.append(
            BlockSpec(f"bb.ir{i}", "inverted_residual", in_ch, out, kernel=k,
                      stride=stride, activation=act, expand_ratio=exp, use_se=se)
        )
        in_ch = out
    blocks.append(
        BlockSpec("bb.extra", "inverted_residual", in_ch, 160, kernel=3, stride=2,
                  activation="hard_swish", expand_ratio=EXTRA_EXPAND, use_se=False)
    )
    taps = {level: row for level, (row, _ch) in enumerate(_TAP_ROWS, start=1)}
    taps[6] = len(blocks) - 1  # the extra block, index includes the stem
    return blocks, taps


def tap_channels() -> dict[int, int]:
    ch = {level: c for level, (_row, c) in enumerate(_TAP_ROWS, start=1)}
    ch[6] = 160
    return ch
