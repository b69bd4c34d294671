"""Run the sidecar under uvicorn: python -m qeleak_sidecar [--port N] ..."""

import argparse
import logging

import uvicorn

from .app import create_app
from .config import ServiceConfig


def main() -> None:
    parser = argparse.ArgumentParser(description="qeleak model sidecar")
    defaults = ServiceConfig()
    parser.add_argument("--port", type=int, default=defaults.port)
    parser.add_argument("--embedding-model", default=defaults.embedding_model)
    parser.add_argument("--nli-model", default=defaults.nli_model)
    parser.add_argument("--bertscore-model", default=defaults.bertscore_model)
    parser.add_argument("--max-batch", type=int, default=defaults.max_batch)
    parser.add_argument("--device", default=defaults.device)
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO)
    config = ServiceConfig(
        embedding_model=args.embedding_model,
        nli_model=args.nli_model,
        bertscore_model=args.bertscore_model,
        port=args.port,
        max_batch=args.max_batch,
        device=args.device,
    )
    uvicorn.run(create_app(config), host="127.0.0.1", port=config.port)


if __name__ == "__main__":
    main()
