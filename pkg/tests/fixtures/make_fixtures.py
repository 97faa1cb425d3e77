"""Regenerate the golden bitstreams (baseline coder, no learned model).

Run only after an intentional format change: python3 tests/fixtures/make_fixtures.py
"""

from pathlib import Path

import numpy as np

from olc.codec import EncodeConfig, encode
from olc.pc_io import PointCloud, write_ply
from olc.synthetic import object_cloud

HERE = Path(__file__).parent


def main():
    pc = object_cloud(np.random.default_rng(7), 32)
    write_ply(HERE / "object32.ply", pc)
    for s in (8, 3):
        bs = encode(pc, EncodeConfig(depth=5, steps=s))
        (HERE / f"object32_s{s}.olc").write_bytes(bs.to_bytes())
    tiny = PointCloud(np.array([[0.0, 0.0, 0.0], [3.0, 1.0, 2.0], [3.0, 3.0, 3.0]]))
    write_ply(HERE / "tiny.ply", tiny)
    (HERE / "tiny_s8.olc").write_bytes(encode(tiny, EncodeConfig(qs=1.0)).to_bytes())


if __name__ == "__main__":
    main()
