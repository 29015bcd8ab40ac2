from django.urls import path

from .api.views import LearningCurveView, ReportView

urlpatterns = [
    path("report/", ReportView.as_view(), name="analytics-report"),
    path("learning-curve/", LearningCurveView.as_view(), name="analytics-learning-curve"),
]
