from animguard import protector
from animguard.blocks import ToyAnimator, evaluate
from animguard.blocks.metrics import resolve_embedder
from animguard.util import read_image, write_image, repeat_mk_dirs
import torch
import argparse


def main(config_file, image_file=None, size=32, output="results/toy", frames=32, iterations=None):

    overrides = {"protect": {"iterations": iterations}} if iterations else {}
    guard = protector.init_from_yaml(config_file, **overrides)

    if image_file is not None:
        x = read_image(image_file)
    else:
        generator = torch.Generator().manual_seed(0)
        x = torch.rand((3, size, size), generator=generator, dtype=torch.float64).to(torch.float32)

    x_p, trace = guard(x)
    print(f"loss {trace.totals[0]:.4f} -> {trace.totals[-1]:.4f}, linf {trace.records[-1]['linf']:.4f}")

    # downstream: the toy animator renders frames from the extracted latent
    animator = ToyAnimator(guard.bundle.encoder, seed=0)
    reference = animator.animate(x, frames)
    embedders = {"image": resolve_embedder("toy"), "video_fid": resolve_embedder("toy-video")}

    for name, image in (("clean", x), ("protected", x_p)):
        report = evaluate(reference, animator.animate(image, frames), embedders, guard.bundle.perceptual, ["psnr", "lpips", "fid", "fid_vid"])
        print(name, {k: round(v, 4) for k, v in report.values.items()})

    out = repeat_mk_dirs(output)
    write_image(x_p, out + "/protected.png")
    trace.write_jsonl(out + "/trace.jsonl")


if __name__ == "__main__":

    parser = argparse.ArgumentParser()
    parser.add_argument("-e", "--example", type=str, default="toy", help="toy, production, ablation/no_frame, ablation/frames_10")
    parser.add_argument("-i", "--image", type=str, default=None, help="image to protect, a random one if omitted")
    parser.add_argument("-s", "--size", type=int, default=32, help="side of the random image")
    parser.add_argument("-f", "--frames", type=int, default=32, help="animated frames")
    parser.add_argument("-n", "--iterations", type=int, default=None, help="override protect iterations")

    args = parser.parse_args()

    config_file = args.example + ("/protect.yaml" if "/" not in args.example else ".yaml")

    main(config_file, args.image, args.size, "results/" + args.example.replace("/", "_"), args.frames, args.iterations)
