import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):
    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="Run",
            fields=[
                (
                    "id",
                    models.BigAutoField(
                        auto_created=True,
                        primary_key=True,
                        serialize=False,
                        verbose_name="ID",
                    ),
                ),
                ("command", models.CharField(max_length=50)),
                ("config", models.JSONField(blank=True, default=dict)),
                ("seeds", models.JSONField(blank=True, default=list)),
                ("input_paths", models.JSONField(blank=True, default=list)),
                ("output_path", models.CharField(blank=True, max_length=500)),
                ("version", models.CharField(max_length=20)),
                ("runtime_seconds", models.FloatField(blank=True, null=True)),
                ("created_at", models.DateTimeField(auto_now_add=True)),
            ],
            options={
                "ordering": ["-created_at"],
            },
        ),
        migrations.CreateModel(
            name="StudyReplicate",
            fields=[
                (
                    "id",
                    models.BigAutoField(
                        auto_created=True,
                        primary_key=True,
                        serialize=False,
                        verbose_name="ID",
                    ),
                ),
                ("index", models.PositiveIntegerField()),
                ("seed", models.JSONField()),
                ("n", models.PositiveIntegerField()),
                ("T", models.PositiveIntegerField()),
                ("alpha", models.FloatField()),
                ("beta", models.FloatField()),
                ("gamma", models.FloatField()),
                ("rmse_independent", models.FloatField(blank=True, null=True)),
                ("rmse_temporal", models.FloatField(blank=True, null=True)),
                (
                    "log_marginal_independent",
                    models.FloatField(blank=True, null=True),
                ),
                ("log_marginal_temporal", models.FloatField(blank=True, null=True)),
                (
                    "status",
                    models.CharField(
                        choices=[
                            ("pending", "Pending"),
                            ("done", "Done"),
                            ("failed", "Failed"),
                        ],
                        default="pending",
                        max_length=10,
                    ),
                ),
                ("error", models.TextField(blank=True)),
                (
                    "run",
                    models.ForeignKey(
                        on_delete=django.db.models.deletion.CASCADE,
                        related_name="replicates",
                        to="hubmodel.run",
                    ),
                ),
            ],
            options={
                "ordering": ["run", "index"],
                "constraints": [
                    models.UniqueConstraint(
                        fields=("run", "index"), name="unique_replicate"
                    )
                ],
            },
        ),
    ]
