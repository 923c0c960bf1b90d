from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name='ScenarioRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('scenario', models.CharField(choices=[('evolve', 'Time evolution'), ('equilibria', 'Constant solutions and stability'), ('bifurcate', 'Bifurcation points'), ('continue', 'Branch continuation'), ('segregate', 'Segregation sweep'), ('packs', 'Pack bound'), ('optimize', 'Pack optimizer')], max_length=20)),
                ('config', models.JSONField(default=dict)),
                ('seed', models.IntegerField(default=0)),
                ('status', models.CharField(choices=[('success', 'Success'), ('numerical_failure', 'Numerical failure'), ('config_error', 'Configuration error')], max_length=20)),
                ('exit_code', models.PositiveSmallIntegerField(default=0)),
                ('wall_time', models.FloatField(default=0.0)),
                ('output_dir', models.CharField(blank=True, max_length=500)),
                ('error', models.JSONField(blank=True, null=True)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'verbose_name': 'Scenario Run',
                'verbose_name_plural': 'Scenario Runs',
                'ordering': ['-created_at'],
                'indexes': [models.Index(fields=['scenario', 'created_at'], name='scenarios_s_scenari_5d0c1e_idx'), models.Index(fields=['status', 'created_at'], name='scenarios_s_status_8a2f47_idx')],
            },
        ),
    ]
