from .mbblock import MBBlockV3Params, mbblock_forward

__all__ = ["MBBlockV3Params", "mbblock_forward"]
