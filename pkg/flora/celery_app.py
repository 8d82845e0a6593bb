"""
Celery App Configuration for flora sweeps
"""

import logging
import os

from celery import Celery

logger = logging.getLogger("flora.sweep")

redis_url = os.getenv('REDIS_URL') or os.getenv('REDIS_PRIVATE_URL') or os.getenv('REDIS_PUBLIC_URL')

if redis_url:
    logger.debug(f"✅ REDIS_URL found: {redis_url[:50]}...")
    app = Celery('flora', broker=redis_url, backend=redis_url, include=['flora.tasks'])
else:
    # No broker: every task runs in-process, in submission order
    app = Celery('flora', broker='memory://', backend='cache+memory://', include=['flora.tasks'])

app.conf.update(
    task_serializer='json',
    result_serializer='json',
    accept_content=['json'],
    timezone='UTC',
    enable_utc=True,
    task_track_started=True,
    task_time_limit=3600,
    task_soft_time_limit=3300,
    result_expires=86400,
    broker_connection_retry_on_startup=True,
    worker_prefetch_multiplier=1,
    task_always_eager=redis_url is None,
    task_eager_propagates=True,
)


def is_eager() -> bool:
    return bool(app.conf.task_always_eager)
