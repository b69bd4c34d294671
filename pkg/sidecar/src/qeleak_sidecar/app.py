"""FastAPI application implementing the provider wire protocol.

Endpoints: POST /v1/embeddings, POST /nli, POST /score, GET /health.
Models load at startup; a failure to load keeps the service from starting.
"""

import logging

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .backends import NLI_LABELS, build_embedder, build_nli, build_scorer
from .config import ServiceConfig

logger = logging.getLogger(__name__)


class EmbeddingsRequest(BaseModel):
    model: str = ""
    input: list[str]


class NliRequest(BaseModel):
    premise: str
    hypothesis: str


class ScoreRequest(BaseModel):
    scorer: str = "bertscore"
    candidates: list[str]
    references: list[str]


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig()
    embedder = build_embedder(config.embedding_model, config.device)
    nli = build_nli(config.nli_model, config.device)
    scorer = build_scorer(config.bertscore_model, config.device)
    probe = embedder.embed(["dimension probe"])
    dim = len(probe[0])
    logger.info(
        "sidecar ready: embed=%s (dim %d) nli=%s score=%s",
        embedder.model_name, dim, nli.model_name, scorer.model_name,
    )

    app = FastAPI(title="qeleak sidecar")

    @app.get("/health")
    def health():
        return {
            "status": "ok",
            "embedding_model": embedder.model_name,
            "nli_model": nli.model_name,
            "bertscore_model": scorer.model_name,
            "dim": dim,
        }

    @app.post("/v1/embeddings")
    def embeddings(req: EmbeddingsRequest):
        if len(req.input) > config.max_batch:
            raise HTTPException(
                status_code=413,
                detail=f"batch of {len(req.input)} exceeds max {config.max_batch}",
            )
        try:
            vectors = embedder.embed(req.input)
        except Exception as exc:  # model failure -> 500 with message
            raise HTTPException(status_code=500, detail=str(exc)) from exc
        return {
            "model": embedder.model_name,
            "data": [
                {"index": i, "embedding": vec} for i, vec in enumerate(vectors)
            ],
        }

    @app.post("/nli")
    def nli_endpoint(req: NliRequest):
        if not req.premise.strip() or not req.hypothesis.strip():
            raise HTTPException(status_code=400,
                                detail="premise and hypothesis must be nonempty")
        try:
            label = nli.judge(req.premise, req.hypothesis)
        except Exception as exc:
            raise HTTPException(status_code=500, detail=str(exc)) from exc
        if label not in NLI_LABELS:
            raise HTTPException(status_code=500, detail=f"backend label {label!r}")
        return {"label": label}

    @app.post("/score")
    def score(req: ScoreRequest):
        if not req.candidates or not req.references:
            raise HTTPException(status_code=400,
                                detail="candidates and references must be nonempty")
        total = len(req.candidates) + len(req.references)
        if total > config.max_batch:
            raise HTTPException(status_code=413,
                                detail=f"{total} texts exceed max {config.max_batch}")
        try:
            matrix = scorer.score_matrix(req.candidates, req.references)
        except Exception as exc:
            raise HTTPException(status_code=500, detail=str(exc)) from exc
        return {"matrix": matrix}

    return app
