from fastapi import APIRouter, HTTPException
from starlette.concurrency import run_in_threadpool

from catalog import select_problem
from errors import NormalFormError, http_status_for
from models import NormalFormDocument, NormalizeRequest
from pipelines import run_normalize

router = APIRouter()

@router.post("/", response_model=NormalFormDocument)
async def normalize(request: NormalizeRequest):
    """Normal form of a built-in or inline problem"""
    try:
        problem = select_problem(request)
        _, document = await run_in_threadpool(run_normalize, problem, request.order)
        return document
    except NormalFormError as e:
        raise HTTPException(
            status_code=http_status_for(e),
            detail=f"Error normalizing: {e}"
        )
