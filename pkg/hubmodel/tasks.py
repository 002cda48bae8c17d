import logging

from django_tasks import task

from .exceptions import HubModelError
from .models import StudyReplicate
from .services import simulate_replicate

logger = logging.getLogger(__name__)


@task()
def run_study_replicate(replicate_id):
    """
    Background task for one simulation-study replicate.

    Samples parameters, simulates a trajectory and fits both the classical
    and the temporal hub model, storing the RMSE of each estimated A on the
    replicate row. Model failures mark the replicate failed instead of
    failing the task, so one bad draw does not stop a study.
    """
    try:
        replicate = StudyReplicate.objects.get(pk=replicate_id)
    except StudyReplicate.DoesNotExist:
        return f"Replicate {replicate_id} not found"

    try:
        values = simulate_replicate(replicate)
    except HubModelError as e:
        logger.warning("Study replicate %s failed: %s", replicate, e)
        replicate.status = StudyReplicate.Status.FAILED
        replicate.error = str(e)
        replicate.save(update_fields=["status", "error"])
        return f"Replicate {replicate_id} failed: {e}"

    for name, value in values.items():
        setattr(replicate, name, value)
    replicate.status = StudyReplicate.Status.DONE
    replicate.error = ""
    replicate.save()
    return f"Replicate {replicate_id} done"
