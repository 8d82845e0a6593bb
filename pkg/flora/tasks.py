"""
Celery Background Tasks
"""

import logging
import time
from typing import Any, Dict, List

from flora.celery_app import app, is_eager
from flora.config import RunConfig
from flora.pipeline import sweep_row, sweep_rows

logger = logging.getLogger("flora.sweep")


@app.task(bind=True, name='flora.sweep_point')
def sweep_point(self, config: Dict[str, Any], axis: str, value, protocol: str = "zsl",
                classifier: str = "flow") -> Dict[str, Any]:
    """
    Train and evaluate one sweep value

    Args:
        config: RunConfig echo (JSON-serializable)
        axis: sweep axis name
        value: axis value for this point
        protocol: 'zsl' | 'gzsl'
        classifier: 'flow' | 'similarity' | 'linear'

    Returns:
        CSV row as a dict
    """
    start_time = time.time()
    if not is_eager() and not self.request.called_directly:
        self.update_state(state='PROGRESS', meta={'axis': axis, 'value': value})
    logger.info(f"🚀 Sweep point {axis}={value} ({protocol}, {classifier})")

    row = sweep_row(RunConfig.from_dict(config), axis, value, protocol, classifier)

    elapsed = time.time() - start_time
    logger.info(f"✅ Sweep point {axis}={value} done in {elapsed:.1f}s")
    return row


@app.task(bind=True, name='flora.sweep_inference')
def sweep_inference(self, config: Dict[str, Any], axis: str, values: List, protocol: str = "zsl",
                    classifier: str = "flow") -> List[Dict[str, Any]]:
    """Train once and evaluate every value of an inference-only axis (t, γ, α)"""
    start_time = time.time()
    if not is_eager() and not self.request.called_directly:
        self.update_state(state='PROGRESS', meta={'axis': axis, 'values': values})
    logger.info(f"🚀 Sweep {axis} over {len(values)} values on one training run ({protocol}, {classifier})")

    rows = sweep_rows(RunConfig.from_dict(config), axis, values, protocol, classifier)

    logger.info(f"✅ Sweep {axis} done in {time.time() - start_time:.1f}s")
    return rows
