# Generated by Django 5.1.1 on 2026-10-17 09:12

import django.core.serializers.json
import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='StudyRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('study', models.CharField(choices=[('single', 'Single calibration'), ('mesh', 'Mesh study'), ('maturity', 'Maturity study'), ('random', 'Random initial guesses')], max_length=16)),
                ('seed', models.BigIntegerField()),
                ('config', models.JSONField(encoder=django.core.serializers.json.DjangoJSONEncoder)),
                ('failed_runs', models.PositiveIntegerField(default=0)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'ordering': ['-created_at', '-id'],
            },
        ),
        migrations.CreateModel(
            name='RunRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('run_id', models.PositiveIntegerField()),
                ('delta', models.FloatField(default=0.0)),
                ('n_x', models.PositiveIntegerField()),
                ('n_nu', models.PositiveIntegerField()),
                ('n_tau', models.PositiveIntegerField()),
                ('T', models.FloatField()),
                ('sigma0', models.FloatField()),
                ('rho0', models.FloatField()),
                ('kappa0', models.FloatField()),
                ('mu0', models.FloatField()),
                ('sigma_opt', models.FloatField(null=True)),
                ('rho_opt', models.FloatField(null=True)),
                ('kappa_opt', models.FloatField(null=True)),
                ('mu_opt', models.FloatField(null=True)),
                ('j0', models.FloatField(null=True)),
                ('j_opt', models.FloatField(null=True)),
                ('improvement', models.FloatField(null=True)),
                ('iterations', models.PositiveIntegerField(default=0)),
                ('status', models.CharField(choices=[('converged', 'Converged'), ('max_iters', 'Iteration limit'), ('line_search_failure', 'Line search failure'), ('error', 'Error')], max_length=24)),
                ('wall_ms', models.FloatField(null=True)),
                ('error', models.TextField(blank=True, default='')),
                ('study_run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='records', to='experiments.studyrun')),
            ],
            options={
                'ordering': ['run_id'],
                'constraints': [models.UniqueConstraint(fields=('study_run', 'run_id'), name='unique_run_per_study')],
            },
        ),
    ]
