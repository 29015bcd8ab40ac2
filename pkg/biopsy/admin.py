from django.contrib import admin

from .models import Biopsy, BiopsySession


class BiopsyInline(admin.TabularInline):
    model = Biopsy
    extra = 0


@admin.register(BiopsySession)
class BiopsySessionAdmin(admin.ModelAdmin):
    list_display = ("chronological_rank", "patient_id", "reference_volume", "created_at")
    search_fields = ("patient_id",)
    inlines = [BiopsyInline]


admin.site.register(Biopsy)
