import sys

sys.path.append("src")
from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from routes import router

app = FastAPI(
    title="Cobra Inspection Service",
    description="Serves a trained bottleneck-fusion checkpoint: status, attention cost and single-utterance decoding.",
)

# Read-only endpoints, any origin may query them
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_methods=["GET", "POST"],
    allow_headers=["*"],
)

app.include_router(router)
