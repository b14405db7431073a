from django.db import models


class TrainingRun(models.Model):
    STATUS_CHOICES = [
        ("running",   "Running"),
        ("completed", "Completed"),
        ("failed",    "Failed"),
    ]

    # Inputs
    config      = models.JSONField(default=dict)
    data_dir    = models.CharField(max_length=500)
    checkpoint  = models.CharField(max_length=500)
    sensor      = models.CharField(max_length=10, default="radar")
    seed        = models.IntegerField(default=0)

    # Outcome
    status          = models.CharField(max_length=10, choices=STATUS_CHOICES, default="running")
    epochs_done     = models.IntegerField(default=0)
    best_score      = models.FloatField(null=True, blank=True)
    best_rot_deg    = models.FloatField(null=True, blank=True)
    best_trans_cm   = models.FloatField(null=True, blank=True)
    message         = models.TextField(blank=True)

    # Meta
    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        ordering = ["-created_at"]

    def __str__(self):
        return f"Run #{self.pk} [{self.status}] {self.checkpoint}"

    def as_dict(self) -> dict:
        return {
            "id":            self.pk,
            "config":        self.config,
            "data_dir":      self.data_dir,
            "checkpoint":    self.checkpoint,
            "sensor":        self.sensor,
            "seed":          self.seed,
            "status":        self.status,
            "epochs_done":   self.epochs_done,
            "best_score":    self.best_score,
            "best_rot_deg":  self.best_rot_deg,
            "best_trans_cm": self.best_trans_cm,
            "message":       self.message,
            "created_at":    self.created_at.isoformat() if self.created_at else None,
        }


class EpochRecord(models.Model):
    run = models.ForeignKey(TrainingRun, on_delete=models.CASCADE, related_name="epochs")

    epoch             = models.IntegerField()
    lr                = models.FloatField()
    loss_total        = models.FloatField()
    loss_calibration  = models.FloatField()
    loss_matching_fv  = models.FloatField()
    loss_matching_bev = models.FloatField()
    val_rot_deg       = models.FloatField(null=True, blank=True)
    val_trans_cm      = models.FloatField(null=True, blank=True)
    is_best           = models.BooleanField(default=False)

    class Meta:
        ordering = ["run", "epoch"]
        constraints = [
            models.UniqueConstraint(fields=["run", "epoch"], name="unique_epoch_per_run"),
        ]

    def __str__(self):
        return f"Run #{self.run_id} epoch {self.epoch}: {self.loss_total:.5f}"

    @classmethod
    def from_ledger(cls, run: TrainingRun, record: dict) -> "EpochRecord":
        train, val = record["train"], record.get("val") or {}
        return cls(
            run=run,
            epoch=record["epoch"],
            lr=record["lr"],
            loss_total=train["total"],
            loss_calibration=train["calibration"],
            loss_matching_fv=train["matching_fv"],
            loss_matching_bev=train["matching_bev"],
            val_rot_deg=val.get("rot_mean_deg"),
            val_trans_cm=val.get("trans_mean_cm"),
            is_best=record.get("best", False),
        )

    def as_dict(self) -> dict:
        return {
            "epoch":             self.epoch,
            "lr":                self.lr,
            "loss_total":        self.loss_total,
            "loss_calibration":  self.loss_calibration,
            "loss_matching_fv":  self.loss_matching_fv,
            "loss_matching_bev": self.loss_matching_bev,
            "val_rot_deg":       self.val_rot_deg,
            "val_trans_cm":      self.val_trans_cm,
            "is_best":           self.is_best,
        }


class EvaluationRun(models.Model):
    RANGE_CHOICES = [
        ("R1", "±10° / ±0.25 m"),
        ("R2", "±20° / ±1.5 m"),
    ]

    checkpoint  = models.CharField(max_length=500)
    data_dir    = models.CharField(max_length=500)
    range_name  = models.CharField(max_length=2, choices=RANGE_CHOICES, default="R1")
    seed        = models.IntegerField(default=0)
    sensor      = models.CharField(max_length=10, default="radar")
    samples     = models.IntegerField(default=0)
    report_path = models.CharField(max_length=500, blank=True)

    # Aggregate errors: rotation in degrees, translation in centimeters
    rot_mean_deg  = models.FloatField(default=0.0)
    roll_deg      = models.FloatField(default=0.0)
    pitch_deg     = models.FloatField(default=0.0)
    yaw_deg       = models.FloatField(default=0.0)
    trans_mean_cm = models.FloatField(default=0.0)
    x_cm          = models.FloatField(default=0.0)
    y_cm          = models.FloatField(default=0.0)
    z_cm          = models.FloatField(default=0.0)

    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ["-created_at"]

    def __str__(self):
        return (f"Eval #{self.pk} [{self.range_name}] {self.rot_mean_deg:.3f} deg / "
                f"{self.trans_mean_cm:.3f} cm")

    def as_dict(self) -> dict:
        return {
            "id":            self.pk,
            "checkpoint":    self.checkpoint,
            "data_dir":      self.data_dir,
            "range":         self.range_name,
            "seed":          self.seed,
            "sensor":        self.sensor,
            "samples":       self.samples,
            "report_path":   self.report_path,
            "rot_mean_deg":  self.rot_mean_deg,
            "roll_deg":      self.roll_deg,
            "pitch_deg":     self.pitch_deg,
            "yaw_deg":       self.yaw_deg,
            "trans_mean_cm": self.trans_mean_cm,
            "x_cm":          self.x_cm,
            "y_cm":          self.y_cm,
            "z_cm":          self.z_cm,
            "created_at":    self.created_at.isoformat() if self.created_at else None,
        }
