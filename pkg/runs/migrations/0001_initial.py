# Generated by Django 5.2 on 2026-10-17 09:12

import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='EvaluationRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('checkpoint', models.CharField(max_length=500)),
                ('data_dir', models.CharField(max_length=500)),
                ('range_name', models.CharField(choices=[('R1', '±10° / ±0.25 m'), ('R2', '±20° / ±1.5 m')], default='R1', max_length=2)),
                ('seed', models.IntegerField(default=0)),
                ('sensor', models.CharField(default='radar', max_length=10)),
                ('samples', models.IntegerField(default=0)),
                ('report_path', models.CharField(blank=True, max_length=500)),
                ('rot_mean_deg', models.FloatField(default=0.0)),
                ('roll_deg', models.FloatField(default=0.0)),
                ('pitch_deg', models.FloatField(default=0.0)),
                ('yaw_deg', models.FloatField(default=0.0)),
                ('trans_mean_cm', models.FloatField(default=0.0)),
                ('x_cm', models.FloatField(default=0.0)),
                ('y_cm', models.FloatField(default=0.0)),
                ('z_cm', models.FloatField(default=0.0)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'ordering': ['-created_at'],
            },
        ),
        migrations.CreateModel(
            name='TrainingRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('config', models.JSONField(default=dict)),
                ('data_dir', models.CharField(max_length=500)),
                ('checkpoint', models.CharField(max_length=500)),
                ('sensor', models.CharField(default='radar', max_length=10)),
                ('seed', models.IntegerField(default=0)),
                ('status', models.CharField(choices=[('running', 'Running'), ('completed', 'Completed'), ('failed', 'Failed')], default='running', max_length=10)),
                ('epochs_done', models.IntegerField(default=0)),
                ('best_score', models.FloatField(blank=True, null=True)),
                ('best_rot_deg', models.FloatField(blank=True, null=True)),
                ('best_trans_cm', models.FloatField(blank=True, null=True)),
                ('message', models.TextField(blank=True)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
            ],
            options={
                'ordering': ['-created_at'],
            },
        ),
        migrations.CreateModel(
            name='EpochRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('epoch', models.IntegerField()),
                ('lr', models.FloatField()),
                ('loss_total', models.FloatField()),
                ('loss_calibration', models.FloatField()),
                ('loss_matching_fv', models.FloatField()),
                ('loss_matching_bev', models.FloatField()),
                ('val_rot_deg', models.FloatField(blank=True, null=True)),
                ('val_trans_cm', models.FloatField(blank=True, null=True)),
                ('is_best', models.BooleanField(default=False)),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='epochs', to='runs.trainingrun')),
            ],
            options={
                'ordering': ['run', 'epoch'],
                'constraints': [models.UniqueConstraint(fields=('run', 'epoch'), name='unique_epoch_per_run')],
            },
        ),
    ]
