"""Stateless HTTP inference service for the chat frontend.

Endpoints: POST /recommend, GET /entities (autocomplete), GET /health.
Conversation state lives entirely in the client; every request carries the
full context sequence, so responses are pure functions of the loaded
checkpoint and the request.
"""
from __future__ import annotations

from fastapi import FastAPI, HTTPException, Query
from pydantic import BaseModel, Field

from .corpus import NUM_SPECIALS, Vocab
from .model import Recommender, recommend_topk


class RecommendRequest(BaseModel):
    context: list[str] = Field(default_factory=list)
    k: int = 10


class RecommendedItem(BaseModel):
    id: str
    surface_form: str
    score: float


class RecommendResponse(BaseModel):
    items: list[RecommendedItem]
    model_version: str
    dropped_context: list[str] = Field(default_factory=list)


def create_app(model: Recommender, vocab: Vocab,
               model_version: str = "unversioned") -> FastAPI:
    app = FastAPI(title="kgrec inference service")

    @app.get("/health")
    def health():
        return {"status": "ok", "model_version": model_version}

    @app.post("/recommend", response_model=RecommendResponse)
    def recommend(request: RecommendRequest):
        if request.k < 1:
            raise HTTPException(status_code=400, detail="k must be positive")
        context, dropped = [], []
        for ext in request.context:
            ent = vocab.id_of.get(ext)
            if ent is None:
                dropped.append(ext)
            else:
                context.append(ent)
        ranked = recommend_topk(model, context, request.k)
        items = [RecommendedItem(id=vocab.external[i],
                                 surface_form=vocab.surface[i],
                                 score=score)
                 for i, score in ranked]
        return RecommendResponse(items=items, model_version=model_version,
                                 dropped_context=dropped)

    @app.get("/entities")
    def entities(q: str = Query(default=""), limit: int = Query(default=20)):
        q = q.strip().lower()
        if not q or limit < 1:
            return []
        matches = []
        for ent in range(NUM_SPECIALS, len(vocab)):
            if vocab.surface[ent].lower().startswith(q):
                matches.append(ent)
        matches.sort()
        return [{"id": vocab.external[e], "surface_form": vocab.surface[e],
                 "is_item": bool(vocab.is_item[e])}
                for e in matches[:limit]]

    return app
