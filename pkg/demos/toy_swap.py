#!/usr/bin/env python3
"""Train the toy model family for a few hundred steps, then swap and score faces.

    python demos/toy_swap.py --steps 200 --out /tmp/megafs_demo
"""
import argparse
from pathlib import Path

import torch

from megafs import MegaFS, save_image
from megafs.data import synthetic_faces
from megafs.evaluation import IdentityGallery, embed, fid, id_retrieval, id_similarity, pooled_features
from megafs.toy import run_toy_training


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--out", default="megafs_demo")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    print(f"training encoder and FTM for {args.steps} steps each ...")
    run = run_toy_training(steps=args.steps)
    for name, log in (("stage 1 (L_inv)", run.encoder_log), ("stage 2 (L_swap)", run.ftm_log)):
        first, last = log.smoothed(min(25, args.steps))
        print(f"  {name}: {first:.2f} -> {last:.2f}")

    pipe = MegaFS(run.encoder, run.generator, "FTM", ftm=run.ftm)
    faces = synthetic_faces(32, 6, seed=123).permute(0, 2, 3, 1)
    swaps, sources = [], []
    for i in range(len(faces)):
        src, tgt = faces[i], faces[(i + 1) % len(faces)]
        res = pipe.swap(src, tgt)
        save_image(res.image, out / f"{i}_to_{(i + 1) % len(faces)}.png")
        swaps.append(res.image)
        sources.append(src)
    print(f"wrote {len(swaps)} swaps to {out}")

    # identity metrics against the toy recognizer
    to_nchw = lambda ims: torch.stack(ims).permute(0, 3, 1, 2)  # noqa: E731
    sw, sr = to_nchw(swaps), to_nchw(sources)
    rec = run.oracles.recognizer
    gallery = IdentityGallery.from_embeddings([str(i) for i in range(len(sr))], embed(sr, rec))
    print(f"ID retrieval {id_retrieval(embed(sw, rec), gallery.labels, gallery):.1f}%")
    print(f"ID similarity {id_similarity(sw, sr, rec):.3f}")
    feats = lambda x: pooled_features(x, run.oracles.feature_extractor)  # noqa: E731
    print(f"FID (swaps vs faces, toy features) {fid(feats(sw), feats(faces.permute(0, 3, 1, 2))):.3f}")


if __name__ == "__main__":
    main()
