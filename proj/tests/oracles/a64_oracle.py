#!/usr/bin/env python3
"""Assembles a64_vectors.s with clang's integrated assembler and prints
{text, word} pairs for the encoder tests."""
import pathlib
import struct
import subprocess
import tempfile

here = pathlib.Path(__file__).parent
src = here / "a64_vectors.s"
with tempfile.TemporaryDirectory() as tmp:
    obj = pathlib.Path(tmp) / "v.o"
    subprocess.run(["clang", "--target=aarch64-linux-gnu", "-march=armv8.3-a", "-c", str(src), "-o", str(obj)],
                   check=True)
    d = obj.read_bytes()
shoff = struct.unpack_from("<Q", d, 0x28)[0]
shentsize, shnum, shstrndx = struct.unpack_from("<HHH", d, 0x3A)
secs = [struct.unpack_from("<IIQQQQIIQQ", d, shoff + i * shentsize) for i in range(shnum)]
names = secs[shstrndx]


def name(off):
    s = d[names[4] + off:]
    return s[: s.index(b"\0")].decode()


text = next(d[s[4]: s[4] + s[5]] for s in secs if name(s[0]) == ".text")
for i, line in enumerate(src.read_text().strip().splitlines()):
    print(f'{{"{line}", 0x{struct.unpack_from("<I", text, 4 * i)[0]:08x}}},')
