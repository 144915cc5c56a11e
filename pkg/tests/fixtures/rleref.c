/* Reference COCO RLE compact-string codec, transcribed from the public
 * cocoapi maskApi.c (rleToString / rleFrString). Used once to generate
 * committed test fixtures. */
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

typedef unsigned long siz;
typedef unsigned int uint;

char* rleToString(const uint *cnts, siz m) {
  siz i, p=0; long x; int more;
  char *s=malloc(sizeof(char)*m*6+1);
  for( i=0; i<m; i++ ) {
    x=(long) cnts[i]; if(i>2) x-=(long) cnts[i-2]; more=1;
    while( more ) {
      char c=x & 0x1f; x >>= 5; more=(c & 0x10) ? x!=-1 : x!=0;
      if(more) c |= 0x20; c+=48; s[p++]=c;
    }
  }
  s[p]=0; return s;
}

uint* rleFrString(char *s, siz *m_out) {
  siz m=0, p=0, k; long x; int more; uint *cnts;
  while( s[m] ) m++; cnts=malloc(sizeof(uint)*(m+1)); m=0;
  while( s[p] ) {
    x=0; k=0; more=1;
    while( more ) {
      char c=s[p]-48; x |= (c & 0x1f) << 5*k;
      more = c & 0x20; p++; k++;
      if(!more && (c & 0x10)) x |= -1 << 5*k;
    }
    if(m>2) x+=(long) cnts[m-2]; cnts[m++]=x;
  }
  *m_out = m; return cnts;
}

/* stdin lines: "encode n c1 ... cn" -> prints string
                "decode <string>"    -> prints counts */
int main(void) {
  char mode[16];
  while (scanf("%15s", mode) == 1) {
    if (!strcmp(mode, "encode")) {
      siz n; scanf("%lu", &n);
      uint *c = malloc(sizeof(uint)*n);
      for (siz i=0;i<n;i++) scanf("%u", &c[i]);
      char *s = rleToString(c, n);
      printf("%s\n", s);
      free(s); free(c);
    } else if (!strcmp(mode, "decode")) {
      char buf[65536]; scanf("%65535s", buf);
      siz m; uint *c = rleFrString(buf, &m);
      for (siz i=0;i<m;i++) printf("%u%c", c[i], i+1==m?'\n':' ');
      free(c);
    }
  }
  return 0;
}
