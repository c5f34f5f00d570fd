from django.urls import include, path
from rest_framework.routers import DefaultRouter

from .views import PriceAPIView, StudyRunViewSet

router = DefaultRouter()
router.register(r'studies', StudyRunViewSet)

urlpatterns = [
    path('price/', PriceAPIView.as_view(), name='price'),
    path('', include(router.urls)),
]
