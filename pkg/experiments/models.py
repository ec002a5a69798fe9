from django.db import models


class ExperimentRun(models.Model):
    """One invocation of the ``nslab`` command, kept as a ledger row."""

    STATUS_CHOICES = [
        ('passed', 'Passed'),
        ('tolerance_failed', 'Tolerance failed'),
        ('numeric_failed', 'Numeric failure'),
        ('invalid', 'Invalid scenario'),
    ]

    scenario_name = models.CharField(max_length=200, blank=True)
    scenario_path = models.CharField(max_length=500)
    subcommand = models.CharField(max_length=50)
    seed = models.PositiveBigIntegerField(
        null=True,
        blank=True,
        help_text="Seed of the PCG64 generator used for point sampling."
    )
    status = models.CharField(max_length=20, choices=STATUS_CHOICES)
    exit_code = models.PositiveSmallIntegerField(default=0)

    # --- RESULTS ---
    summary = models.JSONField(default=dict, blank=True, help_text="The emitted summary document.")
    output_dir = models.CharField(max_length=500, blank=True)

    started_at = models.DateTimeField()
    finished_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        ordering = ['-started_at']

    def __str__(self):
        return f"{self.subcommand} {self.scenario_name or self.scenario_path} ({self.status})"
