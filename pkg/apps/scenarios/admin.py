from django.contrib import admin

from .models import ScenarioRun


@admin.register(ScenarioRun)
class ScenarioRunAdmin(admin.ModelAdmin):
    list_display = ['created_at', 'scenario', 'status', 'exit_code', 'seed', 'wall_time',
                    'output_dir']
    list_filter = ['scenario', 'status', 'created_at']
    search_fields = ['output_dir']
    readonly_fields = ['created_at', 'scenario', 'config', 'seed', 'status', 'exit_code',
                       'wall_time', 'output_dir', 'error']
    date_hierarchy = 'created_at'
    ordering = ['-created_at']

    def has_add_permission(self, request):
        return False  # Runs are recorded by the scenario command

    def has_change_permission(self, request, obj=None):
        return False
