from fastapi import APIRouter, HTTPException
from starlette.concurrency import run_in_threadpool

from catalog import select_problem
from errors import NormalFormError, http_status_for
from models import ProbeReport, ProbeRequest
from pipelines import run_probe

router = APIRouter()

@router.post("/", response_model=ProbeReport)
async def probe(request: ProbeRequest):
    """Optimal order per eps and the super-polynomial diagnostic"""
    try:
        problem = select_problem(request)
        return await run_in_threadpool(
            run_probe,
            problem,
            request.m_max,
            request.eps_list,
            request.seed,
            request.dt,
            request.horizon_factor,
        )
    except NormalFormError as e:
        raise HTTPException(
            status_code=http_status_for(e),
            detail=f"Error probing: {e}"
        )
    except ValueError as e:
        raise HTTPException(status_code=400, detail=f"Error probing: {e}")
