import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture
def tiny_config():
    from patchtraj.config import RunConfig

    return RunConfig(t_obs=8, t_pred=4, scales=(4, 2), spectral_len=8, d_model=8, num_blocks=1,
                     num_heads=2, num_experts=2, top_k=1, num_hypotheses=2, batch_size=4, epochs=2,
                     synthetic_count=10)
