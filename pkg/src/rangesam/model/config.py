from __future__ import annotations

from dataclasses import asdict, dataclass, field


@dataclass
class ModelConfig:
    in_channels: int = 6
    stem_channels: int = 96
    stage_blocks: tuple = (1, 2, 7, 2)
    stage_channels: tuple = (96, 192, 384, 768)
    window_sizes: tuple = ((8, 64), (16, 128), (16, 128), (8, 64))  # (rows, cols)
    global_blocks: tuple = (5, 7, 9, 11)  # 0-based over all blocks
    heads: tuple = (1, 2, 4, 8)
    mlp_ratio: int = 4
    decoder_channels: int = 256
    num_classes: int = 19
    drop_path_max: float = 0.1
    pos_table_shape: tuple = (4, 128)
    pos_mode: str = "grid"  # "grid" or "none"
    input_hw: tuple = (64, 2048)
    use_dwconv: bool = True
    ln_eps: float = 1e-6

    def __post_init__(self):
        self.stage_blocks = tuple(int(b) for b in self.stage_blocks)
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        self.window_sizes = tuple(tuple(int(v) for v in w) for w in self.window_sizes)
        self.global_blocks = tuple(int(i) for i in self.global_blocks)
        self.heads = tuple(int(h) for h in self.heads)
        self.pos_table_shape = tuple(int(v) for v in self.pos_table_shape)
        self.input_hw = tuple(int(v) for v in self.input_hw)
        self.validate()

    @property
    def num_blocks(self) -> int:
        return sum(self.stage_blocks)

    @property
    def num_stages(self) -> int:
        return len(self.stage_blocks)

    def validate(self):
        n = self.num_stages
        if not (len(self.stage_channels) == len(self.window_sizes) == len(self.heads) == n):
            raise ValueError("stage_blocks, stage_channels, window_sizes and heads need one entry per stage")
        if any(b < 1 for b in self.stage_blocks):
            raise ValueError("every stage needs at least one block")
        if self.stem_channels != self.stage_channels[0]:
            raise ValueError("stem_channels must equal the first stage's channels")
        for i in range(n - 1):
            if self.stage_channels[i + 1] != 2 * self.stage_channels[i]:
                raise ValueError("stage_channels must double from stage to stage")
        for c, h in zip(self.stage_channels, self.heads):
            if c % h:
                raise ValueError(f"{c} channels not divisible by {h} heads")
        if any(min(w) < 1 for w in self.window_sizes):
            raise ValueError("window sizes must be positive")
        if any(not 0 <= g < self.num_blocks for g in self.global_blocks):
            raise ValueError(f"global_blocks must lie in [0, {self.num_blocks - 1}]")
        if self.decoder_channels % 4:
            raise ValueError("decoder_channels must be divisible by 4 (RFB branches)")
        if self.pos_mode not in ("grid", "none"):
            raise ValueError("pos_mode must be 'grid' or 'none'")
        h, w = self.input_hw
        k = 2 ** (n - 1)
        if h % k or w % k:
            raise ValueError(f"input_hw must be multiples of {k}")
        if not 0.0 <= self.drop_path_max < 1.0:
            raise ValueError("drop_path_max must lie in [0, 1)")

    def stage_of_block(self, index: int) -> int:
        total = 0
        for s, b in enumerate(self.stage_blocks):
            total += b
            if index < total:
                return s
        raise IndexError(index)

    def drop_rates(self) -> list:
        n = self.num_blocks
        if n == 1:
            return [0.0]
        return [self.drop_path_max * i / (n - 1) for i in range(n)]

    def feature_shapes(self, batch: int = 1) -> list:
        h, w = self.input_hw
        return [(batch, c, h >> s, w >> s) for s, c in enumerate(self.stage_channels)]

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = [list(x) if isinstance(x, tuple) else x for x in v]
        return d

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        """Desk-scale preset keeping four stages and the windowed/global mix."""
        base = dict(stem_channels=16, stage_blocks=(1, 1, 2, 1), stage_channels=(16, 32, 64, 128),
                    window_sizes=((4, 16), (8, 32), (8, 32), (4, 16)), global_blocks=(2, 4),
                    heads=(1, 2, 4, 8), decoder_channels=32, input_hw=(16, 256))
        base.update(overrides)
        return cls(**base)
