import numpy as np
import pytest

from regioncd import GrayImage, ModelConfig, SegMask, STEER_CONFIG, gen_fixture


def half_seg(width: int, height: int, side: str) -> SegMask:
    pixels = np.zeros((height, width), dtype=np.uint8)
    if side == "left":
        pixels[:, : width // 2] = 1
    elif side == "right":
        pixels[:, width // 2 :] = 1
    else:
        raise ValueError(side)
    return SegMask.from_array(pixels)


@pytest.fixture(scope="session")
def steer_cfg() -> ModelConfig:
    return STEER_CONFIG


@pytest.fixture(scope="session")
def steer_weights(steer_cfg):
    return gen_fixture("steer-v1", 0, steer_cfg)


@pytest.fixture(scope="session")
def steer_image(steer_cfg) -> GrayImage:
    side = steer_cfg.image_side
    arr = np.zeros((side, side))
    arr[:, side // 2 :] = 1.0
    return GrayImage.from_array(arr)


@pytest.fixture(scope="session")
def left_seg(steer_cfg) -> SegMask:
    return half_seg(steer_cfg.image_side, steer_cfg.image_side, "left")


@pytest.fixture(scope="session")
def right_seg(steer_cfg) -> SegMask:
    return half_seg(steer_cfg.image_side, steer_cfg.image_side, "right")


@pytest.fixture(scope="session")
def rand_cfg() -> ModelConfig:
    return ModelConfig(
        vocab_size=16,
        embed_dim=32,
        n_heads=4,
        n_layers=2,
        feature_side=4,
        crop_rows=1,
        crop_cols=1,
        image_side=16,
        max_seq=64,
        eos_id=0,
    )


@pytest.fixture(scope="session")
def rand_weights(rand_cfg):
    return gen_fixture("random-v1", 7, rand_cfg)


@pytest.fixture(scope="session")
def rand_image(rand_cfg) -> GrayImage:
    side = rand_cfg.image_side
    ramp = (np.arange(side)[:, None] * side + np.arange(side)[None, :]) / (side * side - 1)
    return GrayImage.from_array(ramp)
