import logging

from rest_framework import status, viewsets
from rest_framework.permissions import AllowAny
from rest_framework.response import Response
from rest_framework.views import APIView

from pricing.exceptions import HestonError
from pricing.forward import price
from pricing.oracle import heston_analytic_put

from .models import StudyRun
from .serializers import PriceRequestSerializer, StudyRunListSerializer, StudyRunSerializer

logger = logging.getLogger(__name__)


class StudyRunViewSet(viewsets.ReadOnlyModelViewSet):
    """Persisted studies; the detail view carries every run record."""

    queryset = StudyRun.objects.prefetch_related('records')
    permission_classes = [AllowAny]

    def get_serializer_class(self):
        if self.action == 'list':
            return StudyRunListSerializer
        return StudyRunSerializer

    def get_queryset(self):
        queryset = self.queryset
        study = self.request.query_params.get('study')
        if study:
            queryset = queryset.filter(study=study)
        return queryset


class PriceAPIView(APIView):
    """PDE put price at (s0, nu0), optionally next to the semi-analytic price."""

    permission_classes = [AllowAny]

    def post(self, request):
        serializer = PriceRequestSerializer(data=request.data)
        serializer.is_valid(raise_exception=True)
        query = serializer.save()

        try:
            pde_price = price(query['params'], query['market'], query['grid'], query['s0'], query['nu0'], query['theta'])
            payload = {'pde_price': pde_price}
            if query['analytic']:
                analytic = heston_analytic_put(query['s0'], query['nu0'], query['market'], query['params'])
                payload['analytic_price'] = analytic
                payload['relative_error'] = abs(pde_price - analytic) / abs(analytic) if analytic else None
        except HestonError as exc:
            logger.warning("Price request failed: %s", exc)
            return Response({'error': str(exc)}, status=status.HTTP_400_BAD_REQUEST)
        return Response(payload, status=status.HTTP_200_OK)
