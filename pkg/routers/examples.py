from fastapi import APIRouter, HTTPException, status
from typing import List

from catalog import get_problem, list_examples
from errors import ProblemNotFoundError
from models import ExampleSummary, ProblemFile

router = APIRouter()

@router.get("/", response_model=List[ExampleSummary])
async def get_examples():
    """List the problems of the catalog"""
    return list_examples()

@router.get("/{name}", response_model=ProblemFile, response_model_exclude_none=True)
async def get_example(name: str):
    """Get one problem file"""
    try:
        return get_problem(name)
    except ProblemNotFoundError as e:
        raise HTTPException(
            status_code=status.HTTP_404_NOT_FOUND,
            detail=str(e)
        )
