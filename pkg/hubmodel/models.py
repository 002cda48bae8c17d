from django.db import models


class Run(models.Model):
    """One command invocation; mirrors the manifest.json in its output dir."""

    command = models.CharField(max_length=50)
    config = models.JSONField(default=dict, blank=True)
    seeds = models.JSONField(default=list, blank=True)
    input_paths = models.JSONField(default=list, blank=True)
    output_path = models.CharField(max_length=500, blank=True)
    version = models.CharField(max_length=20)
    runtime_seconds = models.FloatField(null=True, blank=True)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ["-created_at"]

    def __str__(self):
        return f"{self.command} #{self.pk}"


class StudyReplicate(models.Model):
    class Status(models.TextChoices):
        PENDING = "pending"
        DONE = "done"
        FAILED = "failed"

    run = models.ForeignKey(Run, on_delete=models.CASCADE, related_name="replicates")
    index = models.PositiveIntegerField()
    seed = models.JSONField()  # SeedSequence entropy + spawn key
    n = models.PositiveIntegerField()
    T = models.PositiveIntegerField()
    alpha = models.FloatField()
    beta = models.FloatField()
    gamma = models.FloatField()
    rmse_independent = models.FloatField(null=True, blank=True)
    rmse_temporal = models.FloatField(null=True, blank=True)
    log_marginal_independent = models.FloatField(null=True, blank=True)
    log_marginal_temporal = models.FloatField(null=True, blank=True)
    status = models.CharField(
        max_length=10, choices=Status.choices, default=Status.PENDING
    )
    error = models.TextField(blank=True)

    class Meta:
        ordering = ["run", "index"]
        constraints = [
            models.UniqueConstraint(fields=["run", "index"], name="unique_replicate")
        ]

    def __str__(self):
        return f"{self.run} replicate {self.index}"
