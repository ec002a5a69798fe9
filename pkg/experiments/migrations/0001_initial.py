# Generated by Django 5.2.7 on 2026-10-17 09:12

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('scenario_name', models.CharField(blank=True, max_length=200)),
                ('scenario_path', models.CharField(max_length=500)),
                ('subcommand', models.CharField(max_length=50)),
                ('seed', models.PositiveBigIntegerField(blank=True, help_text='Seed of the PCG64 generator used for point sampling.', null=True)),
                ('status', models.CharField(choices=[('passed', 'Passed'), ('tolerance_failed', 'Tolerance failed'), ('numeric_failed', 'Numeric failure'), ('invalid', 'Invalid scenario')], max_length=20)),
                ('exit_code', models.PositiveSmallIntegerField(default=0)),
                ('summary', models.JSONField(blank=True, default=dict, help_text='The emitted summary document.')),
                ('output_dir', models.CharField(blank=True, max_length=500)),
                ('started_at', models.DateTimeField()),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
            ],
            options={
                'ordering': ['-started_at'],
            },
        ),
    ]
