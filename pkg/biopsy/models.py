from django.core.validators import MinValueValidator
from django.db import models

from .mapping import BiopsyRecord, MappedBiopsy, MappedSession, NeedleSegment, Session
from .sectors import RAW_LABELS, TargetLabel, build_grid

TARGET_CHOICES = tuple((label.code, label.code) for label in RAW_LABELS)


class BiopsySession(models.Model):
    """
    Сохранённая сессия 12-точечной биопсии одного пациента.

    Хранит результат команды map: планировочный бокс в системе опорного
    объёма и перенесённые биопсии (связь Biopsy.session).

    Attributes:
        patient_id (CharField): Идентификатор пациента
        chronological_rank (PositiveIntegerField): Порядковый номер пациента в серии
        reference_volume (CharField): Имя файла опорного объёма
        bbox_x0 ... bbox_z1 (FloatField): Бокс простаты, мм (LPS)
        created_at (DateTimeField): Время импорта

    Methods:
        grid(): Планировочная сетка SectorGrid
        to_mapped_session(): Доменное представление MappedSession
    """
    # Идентификатор пациента (без персональных данных)
    patient_id = models.CharField(
        max_length=64,
        verbose_name="Пациент",
        help_text="Идентификатор пациента",
    )

    # Порядковый номер пациента, определяет разбиение кривой обучения
    chronological_rank = models.PositiveIntegerField(
        unique=True,
        validators=[MinValueValidator(1)],
        verbose_name="Порядковый номер",
        help_text="Номер пациента в хронологическом порядке серии",
    )

    # Опорный объём, в системе которого заданы бокс и сегменты
    reference_volume = models.CharField(
        max_length=255,
        verbose_name="Опорный объём",
        help_text="Имя файла опорного объёма",
    )

    # Ограничивающий бокс простаты
    bbox_x0 = models.FloatField(verbose_name="x0, мм")
    bbox_x1 = models.FloatField(verbose_name="x1, мм")
    bbox_y0 = models.FloatField(verbose_name="y0, мм")
    bbox_y1 = models.FloatField(verbose_name="y1, мм")
    bbox_z0 = models.FloatField(verbose_name="z0, мм")
    bbox_z1 = models.FloatField(verbose_name="z1, мм")

    created_at = models.DateTimeField(auto_now_add=True, verbose_name="Импортирована")

    def grid(self):
        """
        Планировочная сетка сессии.

        Returns:
            SectorGrid: Сетка 3x4 в боксе сессии
        """
        return build_grid([
            [self.bbox_x0, self.bbox_x1],
            [self.bbox_y0, self.bbox_y1],
            [self.bbox_z0, self.bbox_z1],
        ])

    def to_mapped_session(self):
        """
        Собирает доменную сессию с перенесёнными биопсиями.

        Returns:
            MappedSession
        """
        biopsies = [biopsy.to_mapped(self.reference_volume) for biopsy in self.biopsies.all()]
        session = Session(
            patient_id=self.patient_id,
            reference_volume_id=self.reference_volume,
            records=tuple(mapped.record for mapped in biopsies),
            chronological_rank=self.chronological_rank,
            grid=self.grid(),
        )
        return MappedSession(session=session, biopsies=tuple(biopsies))

    def __str__(self):
        return f"Сессия {self.chronological_rank}: {self.patient_id}"

    class Meta:
        verbose_name = "Сессия биопсий"
        verbose_name_plural = "Сессии биопсий"
        ordering = ['chronological_rank']
        indexes = [
            models.Index(fields=['patient_id'], name='biopsy_session_patient_idx'),
        ]
        constraints = [
            models.CheckConstraint(
                condition=(
                    models.Q(bbox_x1__gt=models.F('bbox_x0'))
                    & models.Q(bbox_y1__gt=models.F('bbox_y0'))
                    & models.Q(bbox_z1__gt=models.F('bbox_z0'))
                ),
                name='session_bbox_positive_extent',
            ),
        ]


class Biopsy(models.Model):
    """
    Одна биопсия сессии: разметка иглы и результат переноса в опорный объём.

    Attributes:
        session (ForeignKey): Сессия
        index (PositiveSmallIntegerField): Хронологический номер в сессии
        intended_target (CharField): Код запланированной цели ("BL-R", ...)
        volume (CharField): Имя файла объёма биопсии
        needle_entry_mm, needle_tip_mm (JSONField): Сегмент иглы в своём объёме
        registration_success (BooleanField): Успех регистрации
        score (FloatField): Корреляция регистрации
        mapped_entry_mm, mapped_tip_mm (JSONField): Сегмент в опорном объёме
            (пусто при неуспешной регистрации)
    """
    session = models.ForeignKey(
        BiopsySession,
        on_delete=models.CASCADE,
        related_name="biopsies",
        verbose_name="Сессия",
    )

    # Хронологический номер биопсии в сессии
    index = models.PositiveSmallIntegerField(
        validators=[MinValueValidator(1)],
        verbose_name="Номер",
        help_text="Хронологический номер биопсии в сессии",
    )

    # Один из 12 секторов планировочной сетки
    intended_target = models.CharField(
        max_length=4,
        choices=TARGET_CHOICES,
        verbose_name="Цель",
        help_text="Запланированный сектор",
    )

    volume = models.CharField(
        max_length=255,
        verbose_name="Объём",
        help_text="Имя файла объёма, снятого после выстрела",
    )

    # Ручная разметка иглы в системе объёма биопсии
    needle_entry_mm = models.JSONField(verbose_name="Вход иглы, мм")
    needle_tip_mm = models.JSONField(verbose_name="Кончик иглы, мм")

    registration_success = models.BooleanField(verbose_name="Регистрация успешна")
    score = models.FloatField(null=True, blank=True, verbose_name="Корреляция")

    # Сегмент в системе опорного объёма
    mapped_entry_mm = models.JSONField(null=True, blank=True, verbose_name="Вход (опорный), мм")
    mapped_tip_mm = models.JSONField(null=True, blank=True, verbose_name="Кончик (опорный), мм")

    def to_mapped(self, reference_volume=None):
        """
        Доменное представление биопсии.

        Returns:
            MappedBiopsy
        """
        record = BiopsyRecord(
            index=self.index,
            intended_target=TargetLabel.parse(self.intended_target),
            needle=NeedleSegment(entry=self.needle_entry_mm, tip=self.needle_tip_mm, volume_id=self.volume),
        )
        segment = None
        if self.registration_success:
            segment = NeedleSegment(
                entry=self.mapped_entry_mm, tip=self.mapped_tip_mm, volume_id=reference_volume,
            )
        return MappedBiopsy(
            record=record,
            segment_ref=segment,
            registration_success=self.registration_success,
            score=self.score,
        )

    def __str__(self):
        status = "" if self.registration_success else " [НЕ ПЕРЕНЕСЕНА]"
        return f"Биопсия {self.index} ({self.intended_target}){status}"

    class Meta:
        verbose_name = "Биопсия"
        verbose_name_plural = "Биопсии"
        ordering = ['session', 'index']
        indexes = [
            models.Index(fields=['intended_target'], name='biopsy_target_idx'),
        ]
        constraints = [
            models.UniqueConstraint(fields=['session', 'index'], name='unique_biopsy_index_per_session'),
            # неуспешная регистрация исключает перенесённый сегмент
            models.CheckConstraint(
                condition=(
                    models.Q(registration_success=True)
                    | models.Q(mapped_entry_mm__isnull=True, mapped_tip_mm__isnull=True)
                ),
                name='unmapped_biopsy_has_no_segment',
            ),
        ]
