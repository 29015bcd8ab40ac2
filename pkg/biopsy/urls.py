from django.urls import include, path
from rest_framework_nested.routers import DefaultRouter, NestedDefaultRouter

from .api.views import BiopsySessionViewSet, BiopsyViewSet


router = DefaultRouter()
router.register("sessions", BiopsySessionViewSet, basename="sessions")

sessions_router = NestedDefaultRouter(router, "sessions", lookup="session")
sessions_router.register("biopsies", BiopsyViewSet, basename="session-biopsies")

urlpatterns = [
    path("", include(router.urls)),
    path("", include(sessions_router.urls)),
]
