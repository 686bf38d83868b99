import numpy as np
import pytest

from subbandnet.tensor import Rng
from test_dsp import write_wav


@pytest.fixture(scope="session")
def mini_root(tmp_path_factory):
    """A miniature dataset tree: two keywords, one unknown word, noise."""
    root = tmp_path_factory.mktemp("speech")
    rng = Rng(0)
    clips = {
        "yes": ["alice_nohash_0.wav", "alice_nohash_1.wav", "bob_nohash_0.wav",
                "carol_nohash_0.wav"],
        "no": ["dave_nohash_0.wav", "erin_nohash_0.wav"],
        "banana": ["frank_nohash_0.wav", "grace_nohash_0.wav"],
    }
    for word, files in clips.items():
        (root / word).mkdir()
        for f in files:
            write_wav(root / word / f, 0.1 * rng.normal((16000,)))
    (root / "_background_noise_").mkdir()
    write_wav(root / "_background_noise_" / "hum.wav", 0.05 * rng.normal((48000,)))
    return root
