"""
Published validation errors of semi-supervised and active-learning flow training, stored verbatim
"""
from typing import Dict, List, Tuple

from models.errors import UnknownFixtureError

RATIOS = (0.0, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0)
AL_RATIOS = (0.05, 0.1, 0.2)
AL_METHODS = ("random", "photo_loss", "occ_ratio", "flow_grad_norm")

### name -> (metric, value per label ratio in RATIOS)
LABEL_RATIO_CURVES: Dict[str, Tuple[str, Tuple[float, ...]]] = {
    "flyingchairs": ("epe", (3.066, 2.369, 2.091, 1.803, 1.653, 1.560, 1.550, 1.439)),
    "sintel-clean": ("epe", (1.906, 1.850, 1.776, 1.691, 1.643, 1.625, 1.581, 1.651)),
    "sintel-final": ("epe", (2.933, 2.828, 2.710, 2.598, 2.349, 2.281, 2.281, 2.290)),
    "flyingthings3d": ("epe", (12.037, 10.588, 10.205, 9.584, 8.395, 8.296, 7.833, 7.876)),
    "kitti-2012-fl": ("fl", (5.827, 5.525, 5.325, 5.137, 4.899, 4.973, 4.709, 4.562)),
    "kitti-2015-fl": ("fl", (12.742, 11.462, 11.030, 10.357, 10.109, 9.947, 9.784, 9.448)),
}

### name -> (value at r=0, value at r=1, per AL ratio the values of AL_METHODS)
ACTIVE_LEARNING_CURVES: Dict[str, Tuple[float, float, Tuple[Tuple[float, ...], ...]]] = {
    "al-sintel-clean": (1.906, 1.651, (
        (1.850, 1.807, 1.767, 1.797),
        (1.776, 1.706, 1.686, 1.696),
        (1.691, 1.639, 1.643, 1.631),
    )),
    "al-sintel-final": (2.933, 2.290, (
        (2.828, 2.731, 2.693, 2.770),
        (2.710, 2.541, 2.515, 2.545),
        (2.598, 2.383, 2.373, 2.299),
    )),
    "al-kitti-2012-fl": (5.573, 4.446, (
        (5.363, 5.477, 5.256, 5.353),
        (5.273, 5.175, 5.170, 5.159),
        (5.021, 4.934, 4.929, 4.837),
    )),
    "al-kitti-2015-fl": (12.062, 8.545, (
        (11.456, 11.705, 10.689, 10.994),
        (10.480, 10.441, 10.148, 10.880),
        (9.962, 9.759, 9.736, 9.731),
    )),
}

### Sintel final EPE at r=0.1 for different second-stage data and loss settings
ABLATION_RATIO = 0.1
ABLATION_ROWS: Dict[str, Tuple[float, ...]] = {
    "train-semi": (2.71, 2.54, 2.52, 2.54),
    "train-sup": (2.82, 2.82, 2.59, 2.77),
    "raw+train-semi": (3.13, 3.09, 3.15, 3.07),
}
ABLATION_NAME = "ablation-sintel-final"


def list_fixtures() -> List[str]:
    return [*LABEL_RATIO_CURVES, *ACTIVE_LEARNING_CURVES, ABLATION_NAME]


def fixture_rows(name: str) -> List[Tuple[float, str, float]]:
    """
    (ratio, metric_name, value) rows of a fixture, in table order
    """
    if name in LABEL_RATIO_CURVES:
        metric, values = LABEL_RATIO_CURVES[name]
        return [(ratio, metric, value) for ratio, value in zip(RATIOS, values)]
    if name in ACTIVE_LEARNING_CURVES:
        start, end, table = ACTIVE_LEARNING_CURVES[name]
        rows = []
        for index, method in enumerate(AL_METHODS):
            rows.append((0.0, method, start))
            rows.extend((ratio, method, values[index]) for ratio, values in zip(AL_RATIOS, table))
            rows.append((1.0, method, end))
        return rows
    if name == ABLATION_NAME:
        return [
            (ABLATION_RATIO, f"{row}:{method}", value)
            for row, values in ABLATION_ROWS.items()
            for method, value in zip(AL_METHODS, values)
        ]
    raise UnknownFixtureError(f"Unknown fixture {name!r}; available: {', '.join(list_fixtures())}")
