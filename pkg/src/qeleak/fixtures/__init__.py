"""Bundled toy fixture: 30 claims over a 200-document corpus with canned
mock generations and a known planted-entailment subset.

The shipped config.json carries paths relative to the fixture directory;
write_toy_config materializes an absolute-path copy for CLI runs.
"""

import json
from pathlib import Path

from ..core import RunConfig


def toy_dir() -> Path:
    return Path(__file__).resolve().parent / "toy"


def toy_planted() -> set[str]:
    with open(toy_dir() / "planted.json", encoding="utf-8") as fh:
        return set(json.load(fh)["planted"])


def toy_config(**overrides) -> RunConfig:
    """The fixture's run config with paths resolved to absolute."""
    base = toy_dir()
    with open(base / "config.json", encoding="utf-8") as fh:
        raw = json.load(fh)
    for key in ("claims_path", "corpus_path", "mock_canned_path"):
        raw[key] = str(base / raw[key])
    raw.update(overrides)
    return RunConfig.from_dict(raw)


def write_toy_config(dest: str | Path, **overrides) -> Path:
    dest = Path(dest)
    with open(dest, "w", encoding="utf-8") as fh:
        json.dump(toy_config(**overrides).as_dict(), fh, indent=2, sort_keys=True)
    return dest


def main() -> None:
    import sys

    dest = sys.argv[1] if len(sys.argv) > 1 else "toy_config.json"
    path = write_toy_config(dest)
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
