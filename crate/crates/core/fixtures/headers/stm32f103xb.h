/* Device header excerpt: interrupt numbers and memory map. */
#ifndef __STM32F103xB_H
#define __STM32F103xB_H

typedef enum
{
  NonMaskableInt_IRQn = -14,    /*!< 2 Non Maskable Interrupt */
  HardFault_IRQn = -13,
  SysTick_IRQn = -1,
  WWDG_IRQn = 0,
  PVD_IRQn,
  TAMPER_IRQn,
  RTC_IRQn,
  FLASH_IRQn,
  RCC_IRQn,
  EXTI0_IRQn,
  EXTI1_IRQn,
  EXTI2_IRQn,
  EXTI3_IRQn,
  EXTI4_IRQn,
  DMA1_Channel1_IRQn,
  DMA1_Channel2_IRQn,
  DMA1_Channel3_IRQn,
  DMA1_Channel4_IRQn,
  DMA1_Channel5_IRQn,
  DMA1_Channel6_IRQn,
  DMA1_Channel7_IRQn,
  ADC1_2_IRQn,
  USB_HP_CAN1_TX_IRQn,
  USB_LP_CAN1_RX0_IRQn,
  CAN1_RX1_IRQn,
  CAN1_SCE_IRQn,
  EXTI9_5_IRQn,
  TIM1_BRK_IRQn,
  TIM1_UP_IRQn,
  TIM1_TRG_COM_IRQn,
  TIM1_CC_IRQn,
  TIM2_IRQn,
  TIM3_IRQn,
  TIM4_IRQn,
  I2C1_EV_IRQn,
  I2C1_ER_IRQn,
  I2C2_EV_IRQn,
  I2C2_ER_IRQn,
  SPI1_IRQn,
  SPI2_IRQn,
  USART1_IRQn,
  USART2_IRQn,
  USART3_IRQn,
} IRQn_Type;

#define PERIPH_BASE           0x40000000UL /*!< Peripheral base address */
#define APB1PERIPH_BASE       PERIPH_BASE
#define APB2PERIPH_BASE       (PERIPH_BASE + 0x00010000UL)
#define AHBPERIPH_BASE        (PERIPH_BASE + 0x00020000UL)

#define TIM2_BASE             (APB1PERIPH_BASE + 0x00000000UL)
#define TIM3_BASE             (APB1PERIPH_BASE + 0x00000400UL)
#define USART2_BASE           (APB1PERIPH_BASE + 0x00004400UL)
#define USART1_BASE           (APB2PERIPH_BASE + 0x00003800UL)
#define DMA1_BASE             (AHBPERIPH_BASE + 0x00000000UL)
#define DMA1_Channel1_BASE    (AHBPERIPH_BASE + 0x00000008UL)

#define DMA_CCR_EN_Pos        (0U)
#define DMA_CCR_EN_Msk        (0x1UL << DMA_CCR_EN_Pos)
#define DMA_CCR_EN            DMA_CCR_EN_Msk
#define DMA_CCR_MSIZE_Pos     (10U)
#define DMA_CCR_MSIZE_Msk     (0x3UL << DMA_CCR_MSIZE_Pos)
#define DMA_ISR_TCIF1_Pos     (1U)
#define USART_CR1_TE_Pos      (3U)
#define USART_CR1_RE_Pos      (2U)

static const unsigned int DMA_CHANNEL_COUNT = 7;

#endif /* __STM32F103xB_H */
