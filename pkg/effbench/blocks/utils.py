block_registry = {}


def register_block(cls):
    if cls.kind in block_registry:
        raise ValueError(f"Block kind {cls.kind!r} registered twice")
    block_registry[cls.kind] = cls
    return cls


def bottleneck_width(out_channels: int, factor: float, minimum: int) -> int:
    return max(minimum, int(out_channels * factor))
