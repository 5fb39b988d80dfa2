from fastapi import APIRouter, HTTPException

from cobra.analysis import CostReport
from cobra.errors import CobraError
from cobra.objective import Hypothesis
from cobra.service import DecodeRequest, InferenceService, StatusResponse

router = APIRouter()
service = InferenceService()


@router.on_event("startup")
async def startup_event():
    """Load the configured checkpoint when the application starts"""
    service.load_from_env()


@router.get("/status", response_model=StatusResponse)
async def get_status():
    """Report whether a model is loaded and how it is configured"""
    return service.status()


@router.get("/cost", response_model=CostReport)
async def get_cost(f_m: int, f_b: int, scheme: str = "bottleneck"):
    """Formula and instrumented attention cost for one scheme"""
    try:
        return service.cost(f_m, f_b, scheme)
    except CobraError as e:
        raise HTTPException(status_code=400, detail=str(e))


@router.post("/decode", response_model=Hypothesis)
def decode(request: DecodeRequest):
    """Decode one utterance with the loaded model"""
    try:
        hypothesis = service.decode(request)
    except CobraError as e:
        raise HTTPException(status_code=400, detail=str(e))
    if hypothesis is None:
        raise HTTPException(status_code=404, detail="No model loaded")
    return hypothesis
