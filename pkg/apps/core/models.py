import uuid

from django.db import models

RUN_STATUS_CHOICES = [
    ("pending", "Pending"),
    ("processing", "Processing"),
    ("completed", "Completed"),
    ("failed", "Failed"),
]

COMMAND_CHOICES = [
    ("simulate", "Simulate datasets"),
    ("train", "Train Att-SNN"),
    ("tune", "Tune filter"),
    ("eval", "Evaluate estimator"),
    ("prune", "Prune Att-SNN"),
    ("experiment", "Run experiment"),
]


class PipelineRun(models.Model):
    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    command = models.CharField(max_length=20, choices=COMMAND_CHOICES)

    status = models.CharField(
        max_length=20, choices=RUN_STATUS_CHOICES, default="pending"
    )

    seed = models.BigIntegerField(null=True, blank=True)
    options = models.JSONField(default=dict, blank=True)
    config_hash = models.CharField(max_length=64, blank=True)
    version = models.CharField(max_length=64, blank=True)

    outputs = models.JSONField(default=list, blank=True)
    results = models.JSONField(default=dict, blank=True)

    started_at = models.DateTimeField(null=True, blank=True)
    completed_at = models.DateTimeField(null=True, blank=True)
    error_message = models.TextField(blank=True)

    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        ordering = ["-created_at"]
        indexes = [
            models.Index(fields=["command", "-created_at"], name="core_run_command_idx"),
            models.Index(fields=["status", "-created_at"], name="core_run_status_idx"),
            models.Index(fields=["config_hash"], name="core_run_hash_idx"),
        ]

    def __str__(self):
        return f"{self.command} - Run {self.created_at.strftime('%Y-%m-%d %H:%M')}"

    @property
    def duration(self):
        if self.started_at and self.completed_at:
            return self.completed_at - self.started_at
        return None

    @property
    def is_finished(self):
        return self.status in ("completed", "failed")
