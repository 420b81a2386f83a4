#main.py
import logging
import os

from dotenv import load_dotenv
from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from catalog import NF_LOG_LEVEL, init_catalog
from routers import examples, normalize, probe, validate

load_dotenv()

logging.basicConfig(level=getattr(logging, NF_LOG_LEVEL, logging.INFO))
logger = logging.getLogger(__name__)

app = FastAPI(
    title="OnePhase Normal Form API",
    description="Averaging normal forms for one fast phase with small amplitudes, with numeric validation",
    version="1.0.0"
)

# CORS middleware
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

@app.on_event("startup")
async def startup_event():
    """Load the problem catalog on startup"""
    try:
        init_catalog()
        logger.info("✅ Catalog initialized successfully")
    except Exception as e:
        logger.error(f"❌ Catalog initialization failed: {e}")
        raise e

@app.get("/")
async def root():
    return {"message": "OnePhase Normal Form API is running"}

@app.get("/health")
async def health_check():
    return {"status": "healthy", "service": "OnePhase Normal Form API"}

# Include routers
app.include_router(normalize.router, prefix="/normalize", tags=["Normalize"])
app.include_router(validate.router, prefix="/validate", tags=["Validate"])
app.include_router(probe.router, prefix="/probe", tags=["Probe"])
app.include_router(examples.router, prefix="/examples", tags=["Examples"])


if __name__ == "__main__":
    import uvicorn
    port = int(os.getenv("PORT", "8000"))
    uvicorn.run("main:app", host="0.0.0.0", port=port, reload=False)
