import sys

from eosmute.harness.toy_corpus import MANIFEST_NAME, ToyCorpusConfig, write_toy_corpus
from eosmute.utils.logging import setup_logging


def create_toy_corpus(directory: str = "data/toy", seed: int = 0):
    """Create the synthetic toy corpus for development"""
    setup_logging()
    try:
        cfg = ToyCorpusConfig(seed=seed)
        manifest = write_toy_corpus(directory, cfg)
        print("✅ Toy corpus created successfully!")
        print(f"Manifest: {directory}/{MANIFEST_NAME}")
        for split, count in manifest.split_counts().items():
            print(f"{split}: {count} utterances")
    except Exception as e:
        print(f"Error creating toy corpus: {e}")
        sys.exit(1)


if __name__ == "__main__":
    create_toy_corpus(*sys.argv[1:2])
