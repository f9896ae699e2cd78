from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from app.routes import scenarios

app = FastAPI(
    title="In-Network Rank Minimization API",
    description="Distributed sparsity-regularized rank minimization: scenario runs, graphs and certificates",
    version="1.0.0"
)

# CORS middleware (for plotting front-ends)
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Include routers
app.include_router(scenarios.router)

@app.get("/")
def read_root():
    return {
        "message": "Welcome to the In-Network Rank Minimization API",
        "version": "1.0.0",
        "status": "running"
    }

@app.get("/health")
def health_check():
    return {"status": "healthy"}
