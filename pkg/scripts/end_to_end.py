"""simulate -> fuse each quad -> merge -> evaluate, through the command-line driver."""

import argparse
import contextlib
import io
import json
import math
import time
from pathlib import Path

from polhdr.cli import run
from polhdr.imgcore import read_pfm, read_png
from polhdr.metrics import hdr_psnr, hdr_ssim


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--size", type=int, default=512)
    ap.add_argument("--threads", type=int, default=8)
    ap.add_argument("--noise", type=float, default=0.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    def cli(*argv):
        with contextlib.redirect_stdout(io.StringIO()):
            code = run([str(a) for a in argv])
        if code:
            raise SystemExit(code)

    out = args.out
    start = time.perf_counter()
    cli("simulate", "--width", args.size, "--height", args.size, "--noise", args.noise, "--seed", args.seed,
        "--threads", args.threads, "--out", out)
    manifest = out / "manifest.json"
    n = len(json.loads(manifest.read_text())["quads"])
    paths = [out / f"ideb_{k:02d}.pfm" for k in range(n)]
    for k, path in enumerate(paths):
        cli("fuse", "--manifest", manifest, "--quad", k, "--threads", args.threads, "--out", path)
    cli("merge", "--manifest", manifest, "--ideb", ",".join(map(str, paths)), "--threads", args.threads,
        "--out", out / "hdr.pfm")
    cli("tonemap", "--input", out / "hdr.pfm", "--out", out / "hdr.png")
    elapsed = time.perf_counter() - start

    hdr = read_pfm(out / "hdr.pfm").data
    gt = read_pfm(out / "gt_radiance.pfm").data
    ok = read_png(out / "hdr_mask.png").data[:, :, 0] > 0
    r = hdr[ok]
    r = r[r > 0]
    print(json.dumps({
        "seconds": round(elapsed, 2),
        "stops_ok": math.log2(r.max() / r.min()),
        "log_psnr_db": hdr_psnr(hdr, gt),
        "tonemapped_ssim": hdr_ssim(hdr, gt),
    }, indent=2))


if __name__ == "__main__":
    main()
