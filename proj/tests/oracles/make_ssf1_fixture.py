"""Writes golden SSF1 files with the struct module, independently of the C++ writer."""
import pathlib
import struct
import sys

VALUES = [1.5, -0.0, 1e-45, -2.25, 3.4028234663852886e38, 0.1]


def ssf1(frames, dim, values):
    header = b"SSF1" + struct.pack("<HHII", 1, 0, frames, dim) + bytes(16)
    return header + struct.pack("<%df" % len(values), *values)


def main(out_dir):
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sample_2x3.ssf").write_bytes(ssf1(2, 3, VALUES))
    (out / "truncated_2x3.ssf").write_bytes(ssf1(2, 3, VALUES)[:-3])
    (out / "dim512_1x512.ssf").write_bytes(ssf1(1, 512, [0.25] * 512))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else pathlib.Path(__file__).resolve().parent.parent / "fixtures")
