# Generated by Django 5.2.5 on 2026-10-18 09:12

import uuid

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name='PipelineRun',
            fields=[
                ('id', models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ('command', models.CharField(choices=[('simulate', 'Simulate datasets'), ('train', 'Train Att-SNN'), ('tune', 'Tune filter'), ('eval', 'Evaluate estimator'), ('prune', 'Prune Att-SNN'), ('experiment', 'Run experiment')], max_length=20)),
                ('status', models.CharField(choices=[('pending', 'Pending'), ('processing', 'Processing'), ('completed', 'Completed'), ('failed', 'Failed')], default='pending', max_length=20)),
                ('seed', models.BigIntegerField(blank=True, null=True)),
                ('options', models.JSONField(blank=True, default=dict)),
                ('config_hash', models.CharField(blank=True, max_length=64)),
                ('version', models.CharField(blank=True, max_length=64)),
                ('outputs', models.JSONField(blank=True, default=list)),
                ('results', models.JSONField(blank=True, default=dict)),
                ('started_at', models.DateTimeField(blank=True, null=True)),
                ('completed_at', models.DateTimeField(blank=True, null=True)),
                ('error_message', models.TextField(blank=True)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
            ],
            options={
                'ordering': ['-created_at'],
                'indexes': [
                    models.Index(fields=['command', '-created_at'], name='core_run_command_idx'),
                    models.Index(fields=['status', '-created_at'], name='core_run_status_idx'),
                    models.Index(fields=['config_hash'], name='core_run_hash_idx'),
                ],
            },
        ),
    ]
