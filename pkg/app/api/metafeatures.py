import logging

import numpy as np
from fastapi import APIRouter, HTTPException

from app.schemas.schemas import MetaFeatureRequest, MetaFeatureVector
from app.services.ingest import Dataset
from app.services.metafeatures import compute_metafeatures

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/metafeatures", tags=["metafeatures"])


@router.post("", response_model=MetaFeatureVector)
async def profile(body: MetaFeatureRequest):
    try:
        if len(body.labels) != len(body.samples):
            raise ValueError(f"{len(body.labels)} labels for {len(body.samples)} samples")
        dataset = Dataset(body.name, np.asarray(body.samples, dtype=float), np.asarray(body.labels, dtype=bool))
        return compute_metafeatures(dataset)
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc))
