from django.core.serializers.json import DjangoJSONEncoder
from django.db import models


class StudyRun(models.Model):
    STUDY_CHOICES = [
        ('single', 'Single calibration'),
        ('mesh', 'Mesh study'),
        ('maturity', 'Maturity study'),
        ('random', 'Random initial guesses'),
    ]

    study = models.CharField(max_length=16, choices=STUDY_CHOICES)
    seed = models.BigIntegerField()
    config = models.JSONField(encoder=DjangoJSONEncoder)  # ExperimentSpec snapshot
    failed_runs = models.PositiveIntegerField(default=0)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['-created_at', '-id']

    def __str__(self):
        return f"{self.study} study #{self.pk} (seed {self.seed})"


class RunRecord(models.Model):
    """One calibration of a study; columns mirror the runs CSV."""

    STATUS_CHOICES = [
        ('converged', 'Converged'),
        ('max_iters', 'Iteration limit'),
        ('line_search_failure', 'Line search failure'),
        ('error', 'Error'),
    ]

    study_run = models.ForeignKey(StudyRun, on_delete=models.CASCADE, related_name='records')
    run_id = models.PositiveIntegerField()
    delta = models.FloatField(default=0.0)
    n_x = models.PositiveIntegerField()
    n_nu = models.PositiveIntegerField()
    n_tau = models.PositiveIntegerField()
    T = models.FloatField()
    sigma0 = models.FloatField()
    rho0 = models.FloatField()
    kappa0 = models.FloatField()
    mu0 = models.FloatField()
    sigma_opt = models.FloatField(null=True)
    rho_opt = models.FloatField(null=True)
    kappa_opt = models.FloatField(null=True)
    mu_opt = models.FloatField(null=True)
    j0 = models.FloatField(null=True)
    j_opt = models.FloatField(null=True)
    improvement = models.FloatField(null=True)
    iterations = models.PositiveIntegerField(default=0)
    status = models.CharField(max_length=24, choices=STATUS_CHOICES)
    wall_ms = models.FloatField(null=True)
    error = models.TextField(blank=True, default='')

    class Meta:
        ordering = ['run_id']
        constraints = [
            models.UniqueConstraint(fields=['study_run', 'run_id'], name='unique_run_per_study'),
        ]

    def __str__(self):
        return f"run {self.run_id} of {self.study_run_id}: {self.status}"
