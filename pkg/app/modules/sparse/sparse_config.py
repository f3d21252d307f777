"""
Sparse Coding Configuration
Validated settings for k-means, dictionary learning, coding and pooling
"""
import math
from enum import Enum

from pydantic import BaseModel, ConfigDict, Field


class KmeansInit(str, Enum):
    KMEANS_PLUS_PLUS = 'kmeans_plus_plus'


class InnerSolver(str, Enum):
    COORDINATE_DESCENT_LASSO = 'coordinate_descent_lasso'


class CodingSolver(str, Enum):
    OMP = 'omp'
    LASSO = 'lasso'


class PoolingMode(str, Enum):
    ABSOLUTE = 'absolute'
    SIGNED = 'signed'


class KmeansConfig(BaseModel):
    """Lloyd iterations from k-means++ seeding"""
    model_config = ConfigDict(frozen=True)

    k: int = Field(..., ge=1)
    max_iters: int = Field(100, ge=1)
    seed: int = 0
    init: KmeansInit = KmeansInit.KMEANS_PLUS_PLUS
    tol: float = Field(0.0, ge=0.0)


class DictLearnConfig(BaseModel):
    """Alternating minimisation of (1/n) sum ||y - Dx||^2 + lambda_dl ||x||_1"""
    model_config = ConfigDict(frozen=True)

    lambda_dl: float = Field(0.1, ge=0.0)
    epochs: int = Field(10, ge=1)
    seed: int = 0
    inner_solver: InnerSolver = InnerSolver.COORDINATE_DESCENT_LASSO
    inner_sweeps: int = Field(50, ge=1)
    inner_tol: float = Field(1e-6, ge=0.0)
    replace_dead_atoms: bool = True


class CodingConfig(BaseModel):
    """Per-patch sparse coding against a fixed dictionary"""
    model_config = ConfigDict(frozen=True)

    sparsity_fraction: float = Field(0.03, gt=0.0, le=1.0)
    residual_tol: float = Field(1e-6, ge=0.0)
    solver: CodingSolver = CodingSolver.OMP
    lasso_lambda: float = Field(0.1, ge=0.0)

    def max_nonzeros(self, dict_columns: int) -> int:
        """L = max(1, floor(fraction * D_c)) over all dictionary columns"""
        return max(1, math.floor(self.sparsity_fraction * dict_columns))
