#!/usr/bin/env python3
"""Print parameter counts of the enhancer (frozen encoder included) and of
the full prior UNet, for the full-scale and desk configurations."""

import argparse

from undive.config import RunConfig
from undive.diffusion import Encoder, EncoderHandle, UNet, count_parameters
from undive.enhancer import Enhancer, count_all_parameters

TARGET = 6.723e6


def report(name: str, cfg: RunConfig) -> None:
    model = Enhancer(cfg.enhancer, EncoderHandle(Encoder(cfg.unet)))
    total = count_all_parameters(model)
    trainable = sum(p.numel() for p in model.trainable_parameters())
    print(f"{name}")
    print(f"  enhancer total     {total:>10,}  ({100 * (total / TARGET - 1):+.1f}% vs 6.723M)")
    print(f"    trainable        {trainable:>10,}")
    print(f"    frozen encoder   {total - trainable:>10,}")
    print(f"  prior UNet         {count_parameters(UNet(cfg.unet)):>10,}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--desk", action="store_true", help="also report the desk-scale configuration")
    args = ap.parse_args()
    report("full scale", RunConfig())
    if args.desk:
        report("desk", RunConfig.desk())


if __name__ == "__main__":
    main()
