# Generated by Django 5.2.6 on 2026-10-18 10:12

import django.core.validators
import django.db.models.deletion
from django.db import migrations, models


TARGET_CHOICES = [
    ('BL-R', 'BL-R'), ('BS-R', 'BS-R'), ('ML-R', 'ML-R'), ('MS-R', 'MS-R'), ('AL-R', 'AL-R'), ('AS-R', 'AS-R'),
    ('BL-L', 'BL-L'), ('BS-L', 'BS-L'), ('ML-L', 'ML-L'), ('MS-L', 'MS-L'), ('AL-L', 'AL-L'), ('AS-L', 'AS-L'),
]


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='BiopsySession',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('patient_id', models.CharField(help_text='Идентификатор пациента', max_length=64, verbose_name='Пациент')),
                ('chronological_rank', models.PositiveIntegerField(help_text='Номер пациента в хронологическом порядке серии', unique=True, validators=[django.core.validators.MinValueValidator(1)], verbose_name='Порядковый номер')),
                ('reference_volume', models.CharField(help_text='Имя файла опорного объёма', max_length=255, verbose_name='Опорный объём')),
                ('bbox_x0', models.FloatField(verbose_name='x0, мм')),
                ('bbox_x1', models.FloatField(verbose_name='x1, мм')),
                ('bbox_y0', models.FloatField(verbose_name='y0, мм')),
                ('bbox_y1', models.FloatField(verbose_name='y1, мм')),
                ('bbox_z0', models.FloatField(verbose_name='z0, мм')),
                ('bbox_z1', models.FloatField(verbose_name='z1, мм')),
                ('created_at', models.DateTimeField(auto_now_add=True, verbose_name='Импортирована')),
            ],
            options={
                'verbose_name': 'Сессия биопсий',
                'verbose_name_plural': 'Сессии биопсий',
                'ordering': ['chronological_rank'],
                'indexes': [models.Index(fields=['patient_id'], name='biopsy_session_patient_idx')],
                'constraints': [models.CheckConstraint(condition=models.Q(('bbox_x1__gt', models.F('bbox_x0')), ('bbox_y1__gt', models.F('bbox_y0')), ('bbox_z1__gt', models.F('bbox_z0'))), name='session_bbox_positive_extent')],
            },
        ),
        migrations.CreateModel(
            name='Biopsy',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('index', models.PositiveSmallIntegerField(help_text='Хронологический номер биопсии в сессии', validators=[django.core.validators.MinValueValidator(1)], verbose_name='Номер')),
                ('intended_target', models.CharField(choices=TARGET_CHOICES, help_text='Запланированный сектор', max_length=4, verbose_name='Цель')),
                ('volume', models.CharField(help_text='Имя файла объёма, снятого после выстрела', max_length=255, verbose_name='Объём')),
                ('needle_entry_mm', models.JSONField(verbose_name='Вход иглы, мм')),
                ('needle_tip_mm', models.JSONField(verbose_name='Кончик иглы, мм')),
                ('registration_success', models.BooleanField(verbose_name='Регистрация успешна')),
                ('score', models.FloatField(blank=True, null=True, verbose_name='Корреляция')),
                ('mapped_entry_mm', models.JSONField(blank=True, null=True, verbose_name='Вход (опорный), мм')),
                ('mapped_tip_mm', models.JSONField(blank=True, null=True, verbose_name='Кончик (опорный), мм')),
                ('session', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='biopsies', to='biopsy.biopsysession', verbose_name='Сессия')),
            ],
            options={
                'verbose_name': 'Биопсия',
                'verbose_name_plural': 'Биопсии',
                'ordering': ['session', 'index'],
                'indexes': [models.Index(fields=['intended_target'], name='biopsy_target_idx')],
                'constraints': [models.UniqueConstraint(fields=('session', 'index'), name='unique_biopsy_index_per_session'), models.CheckConstraint(condition=models.Q(('registration_success', True), models.Q(('mapped_entry_mm__isnull', True), ('mapped_tip_mm__isnull', True)), _connector='OR'), name='unmapped_biopsy_has_no_segment')],
            },
        ),
    ]
