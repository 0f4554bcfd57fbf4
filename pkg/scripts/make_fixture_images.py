"""Write the small PGM corpus under tests/fixtures/images."""

from pathlib import Path

from siliconhealth.watermark import GrayImage, synthetic_image, write_pgm

OUT = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "images"


def corpus():
    yield "phantom_256.pgm", synthetic_image("phantom", 256, seed=1)
    yield "gradient_256x160.pgm", GrayImage(synthetic_image("gradient", 256).pixels[:160].copy())
    yield "noise_96.pgm", synthetic_image("noise", 96, seed=2)
    yield "phantom_64x200.pgm", GrayImage(synthetic_image("phantom", 200, seed=3).pixels[:, 68:132].copy())


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for name, image in corpus():
        write_pgm(OUT / name, image)
        print(f"{name}: {image.width}x{image.height}")


if __name__ == "__main__":
    main()
