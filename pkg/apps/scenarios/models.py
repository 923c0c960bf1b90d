from django.db import models


class ScenarioRun(models.Model):
    """Audit record of one scenario invocation"""

    SCENARIO_CHOICES = (
        ('evolve', 'Time evolution'),
        ('equilibria', 'Constant solutions and stability'),
        ('bifurcate', 'Bifurcation points'),
        ('continue', 'Branch continuation'),
        ('segregate', 'Segregation sweep'),
        ('packs', 'Pack bound'),
        ('optimize', 'Pack optimizer'),
    )

    STATUS_CHOICES = (
        ('success', 'Success'),
        ('numerical_failure', 'Numerical failure'),
        ('config_error', 'Configuration error'),
    )

    scenario = models.CharField(max_length=20, choices=SCENARIO_CHOICES)
    config = models.JSONField(default=dict)
    seed = models.IntegerField(default=0)
    status = models.CharField(max_length=20, choices=STATUS_CHOICES)
    exit_code = models.PositiveSmallIntegerField(default=0)
    wall_time = models.FloatField(default=0.0)
    output_dir = models.CharField(max_length=500, blank=True)
    error = models.JSONField(null=True, blank=True)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        verbose_name = "Scenario Run"
        verbose_name_plural = "Scenario Runs"
        ordering = ['-created_at']
        indexes = [
            models.Index(fields=['scenario', 'created_at'], name='scenarios_s_scenari_5d0c1e_idx'),
            models.Index(fields=['status', 'created_at'], name='scenarios_s_status_8a2f47_idx'),
        ]

    def __str__(self):
        return f"{self.scenario} ({self.status}) at {self.created_at:%Y-%m-%d %H:%M}"
