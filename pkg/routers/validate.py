from fastapi import APIRouter, HTTPException
from starlette.concurrency import run_in_threadpool

from catalog import select_problem
from errors import NormalFormError, http_status_for
from models import ValidateReport, ValidateRequest
from pipelines import run_validate

router = APIRouter()

@router.post("/", response_model=ValidateReport)
async def validate(request: ValidateRequest):
    """Run the validation gates; a failed gate is reported, not raised"""
    try:
        problem = select_problem(request)
        return await run_in_threadpool(
            run_validate,
            problem,
            request.order,
            request.eps_list,
            request.seed,
            request.dt,
            request.horizon_factor,
        )
    except NormalFormError as e:
        raise HTTPException(
            status_code=http_status_for(e),
            detail=f"Error validating: {e}"
        )
    except ValueError as e:
        raise HTTPException(status_code=400, detail=f"Error validating: {e}")
